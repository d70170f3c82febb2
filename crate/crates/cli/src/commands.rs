use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDate, TimeZone, Utc};
use chrono_tz::Tz;
use log::info;
use serde_json::json;
use toml::{Table, Value};
use yardcast::artifact::{load_artifact, save_artifact, ModelArtifact};
use yardcast::eval::{
    arima_grid, config_columns, decomposable_standard_grid, grid_search, lstm_standard_grid, make_folds, run_cv,
    write_cv_csv, CvReport,
};
use yardcast::forecast::{fit_with_calendar, ModelParams};
use yardcast::ingest::{build_stock_series, parse_event_log};
use yardcast::par::Execution;
use yardcast::stats::{adf_test, correlogram, log_difference};
use yardcast::synth::{generate_event_log, generate_series, SynthSpec};
use yardcast::{ContainerCategory, ModelFamily, ModelSpec, StockSeries};

use crate::config::AppConfig;
use crate::render::{document, forecast, MAX_DAYS};
use crate::server::AppState;
use crate::{plot, usage, Cli, Command, GlobalArgs};

struct Ctx {
    config: AppConfig,
    data: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    /// Seed given on the command line or in the config file.
    explicit_seed: Option<u64>,
}

impl Ctx {
    fn new(g: GlobalArgs) -> Result<Self> {
        let mut config = AppConfig::load(g.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
        if let Some(tz) = &g.tz {
            config.timezone = Tz::from_str(tz).map_err(|e| usage(format!("--tz: {e}")))?;
        }
        if let Some(d) = g.data {
            config.paths.data = Some(d);
        }
        config.check_paths().map_err(|e| usage(format!("{e:#}")))?;
        let explicit_seed = g.seed.or(config.seed);
        let out = g.out.unwrap_or_else(|| config.paths.reports.clone());
        Ok(Self { data: config.paths.data.clone(), config, out, seed: explicit_seed.unwrap_or(0), explicit_seed })
    }

    fn data(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| usage("no input: pass --data or set paths.data"))
    }

    fn series(&self) -> Result<StockSeries> {
        let path = self.data()?;
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        StockSeries::read_csv(file).with_context(|| format!("reading series {}", path.display()))
    }

    fn out_file(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.out_file(name)?;
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok((path, BufWriter::new(f)))
    }

    fn spec(&self, family: ModelFamily) -> ModelSpec {
        self.config.models.spec(family, self.seed)
    }
}

fn families(arg: &str) -> Result<Vec<ModelFamily>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(ModelFamily::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in arg.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let f: ModelFamily = name.parse().map_err(|e: yardcast::Error| usage(e.to_string()))?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(usage("--model names no model family"));
    }
    Ok(out)
}

fn family(arg: &str) -> Result<ModelFamily> {
    match families(arg)?.as_slice() {
        [f] => Ok(*f),
        _ => Err(usage(format!("--model takes a single family here, got {arg:?}"))),
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(cli.global)?;
    match cli.command {
        Command::Ingest { category } => ingest(&ctx, &category),
        Command::Analyze { lags } => analyze(&ctx, lags),
        Command::Evaluate { model, folds } => evaluate(&ctx, &families(&model)?, folds),
        Command::Tune { model, grid, folds, dry_run } => tune(&ctx, family(&model)?, &grid, folds, dry_run),
        Command::Forecast { model, days, artifact, artifacts } => {
            forecast_cmd(&ctx, family(&model)?, days, artifact.as_deref(), artifacts)
        }
        Command::Serve { artifacts, bind, port } => serve(&ctx, artifacts, bind, port),
        Command::Synth { kind, start, end, constant, dwell } => synth(&ctx, &kind, start, end, constant, dwell),
    }
}

fn ingest(ctx: &Ctx, category: &str) -> Result<()> {
    let categories = if category.eq_ignore_ascii_case("all") {
        ContainerCategory::ALL.to_vec()
    } else {
        vec![category.parse::<ContainerCategory>().map_err(|e| usage(e.to_string()))?]
    };
    let path = ctx.data()?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = parse_event_log(file, ctx.config.timezone).with_context(|| format!("parsing {}", path.display()))?;
    let index = log.default_index()?;
    for c in categories {
        let series = build_stock_series(&log, c, &index, &ctx.config.classification)?;
        let (out, w) = ctx.create(&format!("series_{c}.csv"))?;
        series.write_csv(w)?;
        let peak = series.values().iter().max().copied().unwrap_or(0);
        println!("{c}: {} hours, peak {peak} -> {}", series.len(), out.display());
    }
    Ok(())
}

fn analyze(ctx: &Ctx, lags: usize) -> Result<()> {
    let series = ctx.series()?;
    let y = series.to_f64();
    let levels = adf_test(&y, None)?;
    let (w, _) = log_difference(&y, 1)?;
    let differenced = adf_test(&w, None)?;
    let lags = lags.min(w.len().saturating_sub(2)).max(1);
    let (acf, pacf) = correlogram(&w, lags)?;

    let report = json!({
        "category": series.category().as_str(),
        "hours": series.len(),
        "adf_levels": levels,
        "adf_log_difference": differenced,
        "acf": acf,
        "pacf": pacf,
    });
    let (path, w_json) = ctx.create("analysis.json")?;
    serde_json::to_writer_pretty(w_json, &report)?;
    let (_, mut w_csv) = ctx.create("correlogram.csv")?;
    {
        let mut w = csv::Writer::from_writer(&mut w_csv);
        w.write_record(["lag", "acf", "pacf"])?;
        for k in 0..=lags {
            let p = if k == 0 { 1.0 } else { pacf[k - 1] };
            w.write_record([k.to_string(), acf[k].to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    let svg = plot::line_chart("Correlogram of the log-differenced series", "correlation", &[("acf", &acf[1..]), ("pacf", &pacf)]);
    std::fs::write(ctx.out_file("correlogram.svg")?, svg)?;

    println!("ADF levels: statistic {:.4}, p-value {:.4e}, lags {}", levels.statistic, levels.p_value, levels.lags_used);
    println!(
        "ADF log-difference: statistic {:.4}, p-value {:.4e}, lags {}",
        differenced.statistic, differenced.p_value, differenced.lags_used
    );
    println!("report -> {}", path.display());
    Ok(())
}

fn summary_csv(ctx: &Ctx, reports: &[CvReport]) -> Result<PathBuf> {
    let (path, w) = ctx.create("cv_summary.csv")?;
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "model", "folds_ok", "folds_failed", "mean_mae", "std_mae", "mean_mse", "std_mse", "mean_rmse", "std_rmse",
        "business_mean_rmse",
    ])?;
    for r in reports {
        let a = r.all_hours;
        let mut row = vec![r.model.clone(), a.folds.to_string(), r.failed_folds().to_string()];
        row.extend([a.mean_mae, a.std_mae, a.mean_mse, a.std_mse, a.mean_rmse, a.std_rmse].map(|v| v.to_string()));
        row.push(r.business_hours.map(|b| b.mean_rmse.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(path)
}

fn evaluate(ctx: &Ctx, families: &[ModelFamily], n_folds: usize) -> Result<()> {
    let series = ctx.series()?;
    let folds = make_folds(series.index(), n_folds)?;
    let mut reports = Vec::new();
    for f in families {
        let spec = ctx.spec(*f);
        info!("evaluating {}", spec.label());
        reports.push(run_cv(&series, &spec, &folds, &ctx.config.calendar)?);
    }

    let (folds_path, w) = ctx.create("cv_folds.csv")?;
    write_cv_csv(&reports, w)?;
    let summary_path = summary_csv(ctx, &reports)?;
    let bars: Vec<(&str, f64, f64)> =
        reports.iter().map(|r| (r.model.as_str(), r.all_hours.mean_rmse, r.all_hours.std_rmse)).collect();
    std::fs::write(ctx.out_file("cv_rmse.svg")?, plot::error_bars("Cross-validated RMSE (mean ± std)", "RMSE", &bars))?;
    for fold in &folds {
        let actual = reports
            .iter()
            .flat_map(|r| &r.per_fold)
            .find(|o| o.fold.fold_id == fold.fold_id && !o.actual.is_empty())
            .map(|o| o.actual.clone())
            .unwrap_or_default();
        let mut lines: Vec<(&str, &[f64])> = vec![("actual", &actual)];
        for r in &reports {
            if let Some(o) = r.per_fold.iter().find(|o| o.fold.fold_id == fold.fold_id && !o.predicted.is_empty()) {
                lines.push((r.model.as_str(), &o.predicted));
            }
        }
        let title = format!("Fold {}: {} to {}", fold.fold_id, fold.test_start.format("%Y-%m-%d %H:%M"), fold.test_end.format("%Y-%m-%d %H:%M"));
        std::fs::write(ctx.out_file(&format!("fold_{}.svg", fold.fold_id))?, plot::line_chart(&title, "containers", &lines))?;
    }

    println!("{:<60} {:>10} {:>10} {:>10} {:>6}", "model", "MAE", "RMSE", "std RMSE", "folds");
    for r in &reports {
        let a = r.all_hours;
        println!("{:<60} {:>10.3} {:>10.3} {:>10.3} {:>6}", r.model, a.mean_mae, a.mean_rmse, a.std_rmse, a.folds);
    }
    println!("per-fold -> {}\nsummary -> {}", folds_path.display(), summary_path.display());
    Ok(())
}

/// Cartesian product of the `[values]` arrays in a TOML grid file, each
/// combination laid over the configured defaults for `family`.
pub fn grid_from_file(path: &Path, family: ModelFamily, config: &AppConfig, seed: u64) -> Result<Vec<ModelSpec>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
    let mut t: Table = toml::from_str(&text).map_err(|e| usage(format!("grid {}: {e}", path.display())))?;
    if let Some(Value::String(f)) = t.remove("family") {
        if f.parse::<ModelFamily>().ok() != Some(family) {
            return Err(usage(format!("grid {} is for {f}, not {family}", path.display())));
        }
    }
    let values = match t.remove("values") {
        Some(Value::Table(v)) => v,
        _ => return Err(usage(format!("grid {} needs a [values] table of arrays", path.display()))),
    };
    let base = config.models.spec(family, seed);
    let base_params = match Value::try_from(&base.params)? {
        Value::Table(t) => t,
        _ => unreachable!(),
    };
    let mut combos: Vec<Table> = vec![Table::new()];
    for (key, v) in values {
        let Value::Array(options) = v else {
            return Err(usage(format!("grid value {key} must be an array")));
        };
        combos = combos
            .into_iter()
            .flat_map(|c| {
                options
                    .iter()
                    .map(|o| {
                        let mut c = c.clone();
                        c.insert(key.clone(), o.clone());
                        c
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|c| {
            let mut p = base_params.clone();
            p.extend(c);
            let params: ModelParams = Value::Table(p).try_into().map_err(|e| usage(format!("grid {}: {e}", path.display())))?;
            let spec = ModelSpec { params, seed };
            spec.validate().map_err(|e| usage(e.to_string()))?;
            Ok(spec)
        })
        .collect()
}

fn grid(ctx: &Ctx, family: ModelFamily, name: &str) -> Result<Vec<ModelSpec>> {
    let models = &ctx.config.models;
    let grid = match (name, family) {
        ("standard", ModelFamily::Decomposable) => decomposable_standard_grid(&models.decomposable),
        ("standard", ModelFamily::Lstm) => lstm_standard_grid(&models.lstm),
        ("standard", ModelFamily::Arima) => arima_grid(),
        ("standard", ModelFamily::Naive) => vec![ModelSpec::naive()],
        (path, _) if Path::new(path).is_file() => return grid_from_file(Path::new(path), family, &ctx.config, ctx.seed),
        (other, _) => return Err(usage(format!("--grid must be `standard` or a grid file, got {other:?}"))),
    };
    Ok(grid
        .into_iter()
        .map(|mut s| {
            s.seed = ctx.seed;
            if let ModelParams::Lstm(c) = &mut s.params {
                c.seed = ctx.seed;
            }
            s
        })
        .collect())
}

fn tune(ctx: &Ctx, family: ModelFamily, grid_name: &str, n_folds: usize, dry_run: bool) -> Result<()> {
    let grid = grid(ctx, family, grid_name)?;
    if dry_run {
        let (path, w) = ctx.create(&format!("grid_{family}.csv"))?;
        let mut w = csv::Writer::from_writer(w);
        let names: Vec<&str> = config_columns(&grid[0]).into_iter().map(|(k, _)| k).collect();
        let mut header = vec!["index", "model"];
        header.extend(&names);
        w.write_record(&header)?;
        for (i, s) in grid.iter().enumerate() {
            let mut row = vec![i.to_string(), family.to_string()];
            row.extend(config_columns(s).into_iter().map(|(_, v)| v));
            w.write_record(&row)?;
        }
        w.flush()?;
        println!("{} configurations -> {}", grid.len(), path.display());
        return Ok(());
    }
    let series = ctx.series()?;
    let folds = make_folds(series.index(), n_folds)?;
    let board = grid_search(&series, &grid, &folds, &ctx.config.calendar, Execution::default())?;
    let (path, w) = ctx.create(&format!("leaderboard_{family}.csv"))?;
    board.write_csv(w)?;
    match board.best() {
        Some(best) => {
            let rmse = best.report.as_ref().map(|r| r.all_hours.mean_rmse).unwrap_or(f64::NAN);
            println!("best of {}: {} (mean RMSE {rmse:.3})", board.entries.len(), best.spec.label());
        }
        None => bail!("every configuration failed; see {}", path.display()),
    }
    println!("leaderboard -> {}", path.display());
    Ok(())
}

fn forecast_cmd(
    ctx: &Ctx,
    family: ModelFamily,
    days: usize,
    artifact_path: Option<&Path>,
    artifacts_dir: Option<PathBuf>,
) -> Result<()> {
    if !(1..=MAX_DAYS).contains(&days) {
        return Err(usage(format!("--days must be between 1 and {MAX_DAYS}")));
    }
    let artifact = match artifact_path {
        Some(p) => {
            let a = load_artifact(p).with_context(|| format!("loading {}", p.display()))?;
            if ctx.data.is_some() {
                a.check_fingerprint(&ctx.series()?);
            }
            a
        }
        None => {
            let series = ctx.series()?;
            let fit = fit_with_calendar(&ctx.spec(family), &series, &ctx.config.calendar)?;
            let a = ModelArtifact::new(fit, &series, Utc::now());
            let dir = artifacts_dir.unwrap_or_else(|| ctx.config.paths.artifacts.clone());
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("{}-{}.json", series.category(), family));
            save_artifact(&a, &path)?;
            eprintln!("artifact -> {}", path.display());
            a
        }
    };
    let result = forecast(&artifact, days, &ctx.config.calendar)?;
    let doc = document(&artifact, &result, days);
    let stem = format!("forecast_{}_{}", result.category, artifact.family);
    std::fs::write(ctx.out_file(&format!("{stem}.json"))?, serde_json::to_string_pretty(&doc)? + "\n")?;
    let (_, w) = ctx.create(&format!("{stem}.csv"))?;
    result.write_csv(w)?;
    emit(&serde_json::to_string_pretty(&doc)?)
}

/// Writes to stdout; a closed pipe downstream is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn serve(ctx: &Ctx, artifacts: Option<PathBuf>, bind: Option<String>, port: Option<u16>) -> Result<()> {
    let svc = &ctx.config.service;
    let dir = artifacts.unwrap_or_else(|| ctx.config.paths.artifacts.clone());
    let state = Arc::new(AppState::new(dir, ctx.config.calendar.clone(), svc.default_model).map_err(|e| usage(format!("{e:#}")))?);
    let addr = format!("{}:{}", bind.as_deref().unwrap_or(&svc.bind), port.unwrap_or(svc.port));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        crate::server::serve(state, listener).await
    })
}

fn parse_instant(raw: &str, flag: &str) -> Result<DateTime<Utc>> {
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Ok(Utc.from_utc_datetime(&d.and_hms_opt(0, 0, 0).unwrap()));
    }
    yardcast::ingest::parse_timestamp(raw, Tz::UTC).map_err(|e| usage(format!("{flag}: {e}")))
}

fn synth(ctx: &Ctx, kind: &str, start: Option<String>, end: Option<String>, constant: Option<f64>, dwell: f64) -> Result<()> {
    let reference = SynthSpec::reference();
    let start = start.map(|s| parse_instant(&s, "--start")).transpose()?.unwrap_or(reference.start);
    let end = end.map(|s| parse_instant(&s, "--end")).transpose()?.unwrap_or(reference.end);
    let mut spec = match constant {
        Some(level) => SynthSpec::constant(start, end, level),
        None => SynthSpec { start, end, ..reference },
    };
    spec.seed = ctx.explicit_seed.unwrap_or(spec.seed);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    match kind {
        "series" => {
            let s = generate_series(&spec)?;
            let (path, w) = ctx.create("synth_series.csv")?;
            s.write_csv(w)?;
            println!("{} hourly points -> {}", s.len(), path.display());
        }
        "events" => {
            let log = generate_event_log(&spec, dwell).map_err(|e| usage(e.to_string()))?;
            let (path, w) = ctx.create("synth_events.csv")?;
            log.write_csv(w)?;
            println!("{} events -> {}", log.events.len(), path.display());
        }
        other => return Err(usage(format!("--kind must be `series` or `events`, got {other:?}"))),
    }
    Ok(())
}
