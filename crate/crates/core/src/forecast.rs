//! Common fit/predict contract across model families, and the naive baseline.

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::arima::{fit_arima, forecast_arima, ArimaConfig, ArimaFit};
use crate::decomposable::{fit_decomposable, forecast_decomposable, DecomposableConfig, DecomposableFit};
use crate::error::{Error, Result};
use crate::ingest::ContainerCategory;
use crate::lstm::{forecast_lstm, train, LstmFit, NetworkConfig};
use crate::series::{format_ts, CalendarSpec, StockSeries};

/// Horizon used when none is given: one week of hourly points.
pub const DEFAULT_HORIZON_HOURS: usize = 168;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Naive,
    Arima,
    Decomposable,
    Lstm,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [Self::Naive, Self::Arima, Self::Decomposable, Self::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Arima => "arima",
            Self::Decomposable => "decomposable",
            Self::Lstm => "lstm",
        }
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Self::Naive),
            "arima" => Ok(Self::Arima),
            "decomposable" | "prophet" => Ok(Self::Decomposable),
            "lstm" => Ok(Self::Lstm),
            other => Err(Error::Config(format!("unknown model family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Naive,
    Arima(ArimaConfig),
    Decomposable(DecomposableConfig),
    Lstm(NetworkConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub params: ModelParams,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn naive() -> Self {
        Self { params: ModelParams::Naive, seed: 0 }
    }

    pub fn arima(config: ArimaConfig) -> Self {
        Self { params: ModelParams::Arima(config), seed: 0 }
    }

    pub fn decomposable(config: DecomposableConfig) -> Self {
        Self { params: ModelParams::Decomposable(config), seed: 0 }
    }

    pub fn lstm(config: NetworkConfig) -> Self {
        Self { seed: config.seed, params: ModelParams::Lstm(config) }
    }

    /// Family defaults.
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Naive => Self::naive(),
            ModelFamily::Arima => Self::arima(ArimaConfig::default()),
            ModelFamily::Decomposable => Self::decomposable(DecomposableConfig::default()),
            ModelFamily::Lstm => Self::lstm(NetworkConfig::default()),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self.params {
            ModelParams::Naive => ModelFamily::Naive,
            ModelParams::Arima(_) => ModelFamily::Arima,
            ModelParams::Decomposable(_) => ModelFamily::Decomposable,
            ModelParams::Lstm(_) => ModelFamily::Lstm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.params {
            ModelParams::Naive => Ok(()),
            ModelParams::Arima(c) => c.order.validate(),
            ModelParams::Decomposable(c) => c.validate(),
            ModelParams::Lstm(c) => c.validate(),
        }
    }

    /// Shortest training series this spec accepts.
    pub fn min_length(&self) -> usize {
        match &self.params {
            ModelParams::Naive => 1,
            ModelParams::Arima(c) => c.order.min_length(),
            ModelParams::Decomposable(c) => c.min_length(),
            ModelParams::Lstm(c) => 2 * c.timesteps,
        }
    }

    /// Short single-line description, also used as a leaderboard key.
    pub fn label(&self) -> String {
        match &self.params {
            ModelParams::Naive => "naive".into(),
            ModelParams::Arima(c) => format!("arima({},{},{})", c.order.p, c.order.d, c.order.q),
            ModelParams::Decomposable(c) => format!(
                "decomposable(cps={},sps={},mode={})",
                c.changepoint_prior_scale,
                c.seasonality_prior_scale,
                c.mode.as_str()
            ),
            ModelParams::Lstm(c) => {
                format!("lstm(timesteps={},epochs={},layers={},hidden={})", c.timesteps, c.epochs, c.layers, c.hidden)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub ts: DateTime<Utc>,
    pub mean: f64,
    pub business_day: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub origin: DateTime<Utc>,
    pub category: ContainerCategory,
    pub model: ModelSpec,
    pub points: Vec<ForecastPoint>,
}

impl ForecastResult {
    /// Builds hourly points starting one hour after `origin`, clamping at 0.
    pub fn new(origin: DateTime<Utc>, values: Vec<f64>, model: ModelSpec, category: ContainerCategory) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("forecast horizon must be at least one hour".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::FitFailure(format!("non-finite forecast at step {}", i + 1)));
        }
        let cal = CalendarSpec::default();
        let points = values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let ts = origin + Duration::hours(i as i64 + 1);
                ForecastPoint { ts, mean: v.max(0.0), business_day: cal.is_business_day(ts.date_naive()) }
            })
            .collect();
        Ok(Self { origin, category, model, points })
    }

    /// Re-flags business hours against another calendar.
    pub fn with_calendar(mut self, cal: &CalendarSpec) -> Self {
        for p in &mut self.points {
            p.business_day = cal.is_business_day(p.ts.date_naive());
        }
        self
    }

    pub fn horizon_hours(&self) -> usize {
        self.points.len()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "origin": format_ts(self.origin),
            "category": self.category.as_str(),
            "model": self.model.family().as_str(),
            "horizon_hours": self.horizon_hours(),
            "points": self.points.iter().map(|p| serde_json::json!({
                "ts": format_ts(p.ts),
                "mean": p.mean,
                "business_day": p.business_day,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "category", "model", "mean", "business_day"])?;
        for p in &self.points {
            w.write_record([
                format_ts(p.ts),
                self.category.as_str().to_string(),
                self.model.family().as_str().to_string(),
                p.mean.to_string(),
                p.business_day.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn naive_forecast(series: &StockSeries, horizon_hours: usize) -> Result<ForecastResult> {
    if series.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    let last = series.last_value() as f64;
    ForecastResult::new(series.index().last(), vec![last; horizon_hours], ModelSpec::naive(), series.category())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveFit {
    pub last: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum FitModel {
    Naive(NaiveFit),
    Arima(ArimaFit),
    Decomposable(DecomposableFit),
    Lstm(LstmFit),
}

/// A fitted model of any family. Immutable; `predict` may be called from
/// many threads at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub spec: ModelSpec,
    pub origin: DateTime<Utc>,
    pub category: ContainerCategory,
    pub model: FitModel,
}

impl Fit {
    pub fn family(&self) -> ModelFamily {
        self.spec.family()
    }
}

/// Fits `spec` to `series` with the calendar's holidays available to the
/// decomposable family.
pub fn fit_with_calendar(spec: &ModelSpec, series: &StockSeries, cal: &CalendarSpec) -> Result<Fit> {
    spec.validate()?;
    let required = spec.min_length();
    if series.len() < required {
        return Err(Error::InsufficientData { required, actual: series.len() });
    }
    let model = match &spec.params {
        ModelParams::Naive => FitModel::Naive(NaiveFit { last: series.last_value() as f64 }),
        ModelParams::Arima(c) => FitModel::Arima(fit_arima(series, *c)?),
        ModelParams::Decomposable(c) => FitModel::Decomposable(fit_decomposable(series, c, cal)?),
        ModelParams::Lstm(c) => FitModel::Lstm(train(series, &NetworkConfig { seed: spec.seed, ..c.clone() })?),
    };
    Ok(Fit { spec: spec.clone(), origin: series.index().last(), category: series.category(), model })
}

pub fn fit(spec: &ModelSpec, series: &StockSeries) -> Result<Fit> {
    fit_with_calendar(spec, series, &CalendarSpec::default())
}

pub fn predict(fit: &Fit, horizon_hours: usize) -> Result<ForecastResult> {
    if horizon_hours == 0 {
        return Err(Error::Config("forecast horizon must be at least one hour".into()));
    }
    let mut result = match &fit.model {
        FitModel::Naive(n) => ForecastResult::new(fit.origin, vec![n.last; horizon_hours], ModelSpec::naive(), fit.category)?,
        FitModel::Arima(a) => forecast_arima(a, horizon_hours)?,
        FitModel::Decomposable(d) => forecast_decomposable(d, horizon_hours)?,
        FitModel::Lstm(l) => forecast_lstm(l, horizon_hours)?,
    };
    result.model = fit.spec.clone();
    Ok(result)
}

/// Smallest horizon whose hourly points cover `days` full business days
/// after `origin`.
pub fn business_day_horizon(origin: DateTime<Utc>, days: usize, cal: &CalendarSpec) -> usize {
    let mut business_hours = 0;
    let mut h = 0;
    while business_hours < days * 24 {
        h += 1;
        if cal.is_business_day((origin + Duration::hours(h as i64)).date_naive()) {
            business_hours += 1;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::TimeIndex;
    use chrono::TimeZone;

    fn series(values: Vec<u32>) -> StockSeries {
        let start = Utc.with_ymd_and_hms(2024, 4, 1, 0, 0, 0).unwrap();
        StockSeries::new(TimeIndex::new(start, values.len()).unwrap(), values, ContainerCategory::Standard).unwrap()
    }

    #[test]
    fn naive_is_flat() {
        let s = series(vec![3, 9, 450]);
        let f = naive_forecast(&s, 120).unwrap();
        assert_eq!(f.horizon_hours(), 120);
        assert!(f.points.iter().all(|p| p.mean == 450.0));
        assert_eq!(f.points[0].ts, s.index().last() + Duration::hours(1));
        assert_eq!(naive_forecast(&series(vec![7]), 3).unwrap().values(), vec![7.0; 3]);
        assert!(naive_forecast(&s, 0).is_err());
    }

    #[test]
    fn dispatch_matches_naive_and_rejects_zero_horizon() {
        let s = series(vec![1, 2, 3, 4]);
        let f = fit(&ModelSpec::naive(), &s).unwrap();
        assert_eq!(predict(&f, 10).unwrap(), naive_forecast(&s, 10).unwrap());
        assert!(predict(&f, 0).is_err());
    }

    #[test]
    fn short_series_names_the_minimum() {
        let s = series(vec![1; 20]);
        let err = fit(&ModelSpec::default_for(ModelFamily::Arima), &s).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { required: 80, actual: 20 }));
    }

    #[test]
    fn json_shape() {
        let f = naive_forecast(&series(vec![5]), 2).unwrap();
        let v = f.to_json();
        assert_eq!(v["model"], "naive");
        assert_eq!(v["category"], "standard");
        assert_eq!(v["origin"], "2024-04-01T00:00:00Z");
        assert_eq!(v["points"][1]["ts"], "2024-04-01T02:00:00Z");
        assert_eq!(v["points"][0]["mean"], 5.0);
    }

    #[test]
    fn business_day_horizons() {
        let cal = CalendarSpec::default();
        // Origin Sunday 23:00: Monday through Friday follow directly.
        let sunday = Utc.with_ymd_and_hms(2024, 4, 7, 23, 0, 0).unwrap();
        assert_eq!(business_day_horizon(sunday, 5, &cal), 120);
        // From Friday or Monday night a weekend falls inside the horizon.
        let friday = Utc.with_ymd_and_hms(2024, 4, 12, 23, 0, 0).unwrap();
        assert_eq!(business_day_horizon(friday, 5, &cal), 168);
        let monday = Utc.with_ymd_and_hms(2024, 4, 8, 23, 0, 0).unwrap();
        assert_eq!(business_day_horizon(monday, 5, &cal), 168);
        let holiday = CalendarSpec::default().with_holiday("x", [sunday.date_naive() + Duration::days(1)]);
        assert_eq!(business_day_horizon(sunday, 5, &holiday), 192);
    }

    #[test]
    fn family_names_round_trip() {
        for fam in ModelFamily::ALL {
            assert_eq!(fam.as_str().parse::<ModelFamily>().unwrap(), fam);
        }
        assert_eq!("prophet".parse::<ModelFamily>().unwrap(), ModelFamily::Decomposable);
        assert!("sarima".parse::<ModelFamily>().is_err());
    }
}
