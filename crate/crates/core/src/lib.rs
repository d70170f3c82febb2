//! Forecasting engine for hourly empty-container availability at a terminal
//! depot.
//!
//! Gate-event logs are aggregated into hourly [`StockSeries`], which any of
//! four model families (naive, ARIMA, a decomposable trend/seasonality/holiday
//! model and a stacked LSTM) can fit and extrapolate. The [`eval`] module
//! scores them with monthly rolling-origin cross-validation.

pub mod arima;
pub mod artifact;
pub mod decomposable;
pub mod error;
pub mod eval;
pub mod forecast;
pub mod ingest;
pub mod lstm;
pub mod optim;
pub mod par;
pub mod series;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use forecast::{fit, predict, ForecastResult, ModelFamily, ModelSpec};
pub use ingest::ContainerCategory;
pub use series::{CalendarSpec, StockSeries, TimeIndex};
