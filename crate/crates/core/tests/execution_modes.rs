//! Sequential and parallel execution give identical results.

use chrono::{Duration, TimeZone, Utc};
use yardcast::arima::ArimaConfig;
use yardcast::eval::{grid_search, make_folds, run_cv_with};
use yardcast::ingest::{build_stock_series_with, ClassificationTable};
use yardcast::lstm::{train_with, NetworkConfig};
use yardcast::par::Execution;
use yardcast::series::make_hourly_index;
use yardcast::synth::{generate_event_log, generate_series, SynthSpec};
use yardcast::{CalendarSpec, ContainerCategory, ModelSpec};

fn spec(days: i64) -> SynthSpec {
    let start = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    SynthSpec { start, end: start + Duration::days(days), ..SynthSpec::reference() }
}

#[test]
fn cross_validation_and_grid() {
    let series = generate_series(&spec(150)).unwrap();
    let folds = make_folds(series.index(), 3).unwrap();
    let cal = CalendarSpec::default();
    let arima = ModelSpec::arima(ArimaConfig::default());
    let seq = run_cv_with(&series, &arima, &folds, &cal, Execution::Sequential).unwrap();
    let par = run_cv_with(&series, &arima, &folds, &cal, Execution::Parallel).unwrap();
    assert_eq!(seq, par);

    let grid = vec![ModelSpec::naive(), arima];
    let a = grid_search(&series, &grid, &folds, &cal, Execution::Sequential).unwrap();
    let b = grid_search(&series, &grid, &folds, &cal, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn lstm_training() {
    let series = generate_series(&spec(20)).unwrap();
    let cfg = NetworkConfig { timesteps: 12, hidden: 6, epochs: 3, max_train_windows: Some(200), ..NetworkConfig::reduced() };
    let a = train_with(&series, &cfg, Execution::Sequential).unwrap();
    let b = train_with(&series, &cfg, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn aggregation() {
    let s = spec(30);
    let log = generate_event_log(&s, 8.0).unwrap();
    let index = make_hourly_index(s.start, s.end).unwrap();
    let table = ClassificationTable::default();
    let a = build_stock_series_with(&log, ContainerCategory::Standard, &index, &table, Execution::Sequential).unwrap();
    let b = build_stock_series_with(&log, ContainerCategory::Standard, &index, &table, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}
