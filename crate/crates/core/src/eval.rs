//! Error metrics, monthly rolling-origin cross-validation and grid search.

use chrono::{DateTime, Duration, Months, Utc};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::arima::ArimaConfig;
use crate::decomposable::{DecomposableConfig, SeasonalityMode};
use crate::error::{Error, Result};
use crate::forecast::{fit_with_calendar, predict, ModelParams, ModelSpec};
use crate::lstm::NetworkConfig;
use crate::par::Execution;
use crate::series::{business_day_mask, format_ts, CalendarSpec, StockSeries, TimeIndex};

/// Hours in every test window.
pub const TEST_HOURS: usize = 168;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub n: usize,
}

pub fn compute_metrics(actual: &[f64], predicted: &[f64]) -> Result<MetricRow> {
    if actual.len() != predicted.len() {
        return Err(Error::Shape(format!("{} actual values vs {} predictions", actual.len(), predicted.len())));
    }
    if actual.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    let n = actual.len() as f64;
    let (abs, sq) = actual.iter().zip(predicted).fold((0.0, 0.0), |(a, s), (y, p)| {
        let e = y - p;
        (a + e.abs(), s + e * e)
    });
    let mse = sq / n;
    Ok(MetricRow { mae: abs / n, mse, rmse: mse.sqrt(), n: actual.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_id: usize,
    pub train_end: DateTime<Utc>,
    pub test_start: DateTime<Utc>,
    pub test_end: DateTime<Utc>,
}

/// Folds ending at the last index hour and at the same wall time 1, 2, …
/// calendar months earlier (day clamped to the month length). Each test
/// window is the 168 hours ending there; training is everything before.
pub fn make_folds(index: &TimeIndex, n_folds: usize) -> Result<Vec<FoldSpec>> {
    if n_folds == 0 {
        return Err(Error::Config("need at least one fold".into()));
    }
    let last = index.last();
    let mut folds = Vec::with_capacity(n_folds);
    for k in 0..n_folds {
        let test_end = last
            .checked_sub_months(Months::new(k as u32))
            .ok_or_else(|| Error::Config(format!("cannot shift {} back {k} months", format_ts(last))))?;
        let test_start = test_end - Duration::hours(TEST_HOURS as i64 - 1);
        let train_end = test_start - Duration::hours(1);
        if train_end < index.start() {
            let required = (last - train_end).num_hours() as usize + 1;
            return Err(Error::InsufficientData { required, actual: index.len() });
        }
        folds.push(FoldSpec { fold_id: k, train_end, test_start, test_end });
    }
    Ok(folds)
}

/// Mean and sample standard deviation of each metric over folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_mae: f64,
    pub std_mae: f64,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub folds: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl Aggregate {
    pub fn of(rows: &[MetricRow]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let pick = |f: fn(&MetricRow) -> f64| mean_std(&rows.iter().map(f).collect::<Vec<_>>());
        let (mean_mae, std_mae) = pick(|r| r.mae);
        let (mean_mse, std_mse) = pick(|r| r.mse);
        let (mean_rmse, std_rmse) = pick(|r| r.rmse);
        Some(Self { mean_mae, std_mae, mean_mse, std_mse, mean_rmse, std_rmse, folds: rows.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub fold: FoldSpec,
    /// All 168 test hours.
    pub metrics: Option<MetricRow>,
    /// Business-day hours only.
    pub business: Option<MetricRow>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: String,
    pub per_fold: Vec<FoldOutcome>,
    pub all_hours: Aggregate,
    pub business_hours: Option<Aggregate>,
}

impl CvReport {
    /// Report from already computed fold rows.
    pub fn from_rows(model: &str, rows: &[(FoldSpec, MetricRow)]) -> Result<Self> {
        let per_fold = rows
            .iter()
            .map(|(fold, m)| FoldOutcome {
                fold: *fold,
                metrics: Some(*m),
                business: None,
                actual: vec![],
                predicted: vec![],
                error: None,
            })
            .collect();
        Self::aggregate(model, per_fold)
    }

    fn aggregate(model: &str, per_fold: Vec<FoldOutcome>) -> Result<Self> {
        let rows: Vec<MetricRow> = per_fold.iter().filter_map(|f| f.metrics).collect();
        let all_hours = Aggregate::of(&rows).ok_or_else(|| {
            let reasons: Vec<String> = per_fold.iter().filter_map(|f| f.error.clone()).collect();
            Error::FitFailure(format!("every fold failed for {model}: {}", reasons.join("; ")))
        })?;
        let business: Vec<MetricRow> = per_fold.iter().filter_map(|f| f.business).collect();
        Ok(Self { model: model.into(), business_hours: Aggregate::of(&business), all_hours, per_fold })
    }

    pub fn failed_folds(&self) -> usize {
        self.per_fold.iter().filter(|f| f.metrics.is_none()).count()
    }
}

fn evaluate_fold(series: &StockSeries, spec: &ModelSpec, fold: &FoldSpec, cal: &CalendarSpec) -> Result<FoldOutcome> {
    let train = series.window(series.index().start(), fold.train_end)?;
    let test = series.window(fold.test_start, fold.test_end)?;
    let fit = fit_with_calendar(spec, &train, cal)?;
    let forecast = predict(&fit, test.len())?;
    let actual = test.to_f64();
    let predicted = forecast.values();
    let metrics = compute_metrics(&actual, &predicted)?;
    let mask = business_day_mask(test.index(), cal);
    let (ba, bp): (Vec<f64>, Vec<f64>) =
        actual.iter().zip(&predicted).zip(&mask).filter(|(_, m)| **m).map(|((a, p), _)| (*a, *p)).unzip();
    let business = if ba.is_empty() { None } else { Some(compute_metrics(&ba, &bp)?) };
    Ok(FoldOutcome { fold: *fold, metrics: Some(metrics), business, actual, predicted, error: None })
}

pub fn run_cv(series: &StockSeries, spec: &ModelSpec, folds: &[FoldSpec], cal: &CalendarSpec) -> Result<CvReport> {
    run_cv_with(series, spec, folds, cal, Execution::default())
}

/// Fits and scores every fold. A failing fold is recorded and left out of
/// the aggregates; the run only fails when every fold does.
pub fn run_cv_with(
    series: &StockSeries,
    spec: &ModelSpec,
    folds: &[FoldSpec],
    cal: &CalendarSpec,
    exec: Execution,
) -> Result<CvReport> {
    spec.validate()?;
    for f in folds {
        if series.index().position(f.test_end).is_none() || series.index().position(f.test_start).is_none() {
            return Err(Error::InvalidSeries(format!("series does not cover fold {} ({})", f.fold_id, format_ts(f.test_end))));
        }
    }
    let label = spec.label();
    let per_fold = exec.map(folds, |fold| {
        evaluate_fold(series, spec, fold, cal).unwrap_or_else(|e| {
            warn!("{label}: fold {} failed: {e}", fold.fold_id);
            FoldOutcome {
                fold: *fold,
                metrics: None,
                business: None,
                actual: vec![],
                predicted: vec![],
                error: Some(e.to_string()),
            }
        })
    });
    CvReport::aggregate(&label, per_fold)
}

/// Per-fold rows as `fold,model,mae,mse,rmse,n`.
pub fn write_cv_csv<W: std::io::Write>(reports: &[CvReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fold", "model", "mae", "mse", "rmse", "n"])?;
    for r in reports {
        for f in &r.per_fold {
            if let Some(m) = f.metrics {
                w.write_record([
                    f.fold.fold_id.to_string(),
                    r.model.clone(),
                    m.mae.to_string(),
                    m.mse.to_string(),
                    m.rmse.to_string(),
                    m.n.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Changepoint prior × seasonality prior × mode, 32 configurations.
pub fn decomposable_standard_grid(base: &DecomposableConfig) -> Vec<ModelSpec> {
    let mut grid = Vec::new();
    for cps in [0.001, 0.01, 0.1, 0.5] {
        for sps in [0.01, 0.1, 1.0, 10.0] {
            for mode in [SeasonalityMode::Additive, SeasonalityMode::Multiplicative] {
                grid.push(ModelSpec::decomposable(DecomposableConfig {
                    changepoint_prior_scale: cps,
                    seasonality_prior_scale: sps,
                    mode,
                    ..base.clone()
                }));
            }
        }
    }
    grid
}

/// Timesteps × epochs × layers, 150 configurations.
pub fn lstm_standard_grid(base: &NetworkConfig) -> Vec<ModelSpec> {
    let mut grid = Vec::new();
    for timesteps in [60, 80, 100, 150, 200] {
        for epochs in [50, 100, 120, 150, 200] {
            for layers in [2, 3, 4, 5, 8, 10] {
                grid.push(ModelSpec::lstm(NetworkConfig { timesteps, epochs, layers, ..base.clone() }));
            }
        }
    }
    grid
}

/// A few ARIMA orders around the default.
pub fn arima_grid() -> Vec<ModelSpec> {
    let mut grid = Vec::new();
    for p in [1, 2, 3] {
        for q in [0, 2, 5] {
            grid.push(ModelSpec::arima(ArimaConfig { order: crate::arima::ArimaOrder::new(p, 1, q), include_constant: true }));
        }
    }
    grid
}

/// Name/value pairs describing a configuration, for leaderboard columns.
pub fn config_columns(spec: &ModelSpec) -> Vec<(&'static str, String)> {
    match &spec.params {
        ModelParams::Naive => vec![],
        ModelParams::Arima(c) => vec![
            ("p", c.order.p.to_string()),
            ("d", c.order.d.to_string()),
            ("q", c.order.q.to_string()),
            ("include_constant", c.include_constant.to_string()),
        ],
        ModelParams::Decomposable(c) => vec![
            ("changepoint_prior_scale", c.changepoint_prior_scale.to_string()),
            ("seasonality_prior_scale", c.seasonality_prior_scale.to_string()),
            ("mode", c.mode.as_str().to_string()),
            ("n_changepoints", c.n_changepoints.to_string()),
        ],
        ModelParams::Lstm(c) => vec![
            ("timesteps", c.timesteps.to_string()),
            ("epochs", c.epochs.to_string()),
            ("layers", c.layers.to_string()),
            ("hidden", c.hidden.to_string()),
            ("learning_rate", c.learning_rate.to_string()),
            ("batch_size", c.batch_size.to_string()),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    /// Position in the enumerated grid.
    pub index: usize,
    pub spec: ModelSpec,
    /// `None` when every fold failed.
    pub report: Option<CvReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub entries: Vec<LeaderboardEntry>,
}

impl Leaderboard {
    pub fn best(&self) -> Option<&LeaderboardEntry> {
        self.entries.first().filter(|e| e.report.is_some())
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let config_names: Vec<&str> = self.entries.first().map_or(vec![], |e| {
            config_columns(&e.spec).into_iter().map(|(k, _)| k).collect()
        });
        let mut header = vec!["rank", "index", "model"];
        header.extend(&config_names);
        header.extend(["mean_mae", "std_mae", "mean_mse", "std_mse", "mean_rmse", "std_rmse", "folds_ok", "error"]);
        w.write_record(&header)?;
        for e in &self.entries {
            let mut row = vec![e.rank.to_string(), e.index.to_string(), e.spec.family().to_string()];
            row.extend(config_columns(&e.spec).into_iter().map(|(_, v)| v));
            match &e.report {
                Some(r) => {
                    let a = r.all_hours;
                    row.extend([a.mean_mae, a.std_mae, a.mean_mse, a.std_mse, a.mean_rmse, a.std_rmse].map(|v| v.to_string()));
                    row.push(a.folds.to_string());
                }
                None => row.extend(std::iter::repeat_n(String::new(), 6).chain(["0".to_string()])),
            }
            row.push(e.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores every configuration with `evaluate` and ranks by mean RMSE, then
/// mean MAE, then grid position. Configurations whose evaluation fails go
/// last.
pub fn grid_search_with<F>(grid: &[ModelSpec], exec: Execution, evaluate: F) -> Result<Leaderboard>
where
    F: Fn(&ModelSpec) -> Result<CvReport> + Sync + Send,
{
    if grid.is_empty() {
        return Err(Error::Config("empty parameter grid".into()));
    }
    let results = exec.map_range(grid.len(), |i| evaluate(&grid[i]));
    let mut entries: Vec<LeaderboardEntry> = results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let (report, error) = match r {
                Ok(rep) => (Some(rep), None),
                Err(e) => (None, Some(e.to_string())),
            };
            LeaderboardEntry { rank: 0, index, spec: grid[index].clone(), report, error }
        })
        .collect();
    let key = |e: &LeaderboardEntry| e.report.as_ref().map(|r| (r.all_hours.mean_rmse, r.all_hours.mean_mae));
    entries.sort_by(|a, b| match (key(a), key(b)) {
        (Some(x), Some(y)) => x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    for (rank, e) in entries.iter_mut().enumerate() {
        e.rank = rank + 1;
    }
    Ok(Leaderboard { entries })
}

pub fn grid_search(
    series: &StockSeries,
    grid: &[ModelSpec],
    folds: &[FoldSpec],
    cal: &CalendarSpec,
    exec: Execution,
) -> Result<Leaderboard> {
    grid_search_with(grid, exec, |spec| run_cv_with(series, spec, folds, cal, exec))
}
