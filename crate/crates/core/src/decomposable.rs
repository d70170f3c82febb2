//! Additive or multiplicative trend + seasonality + holiday model fitted by
//! penalised least squares.
//!
//! ```text
//! additive:        y = g + s + h + ε
//! multiplicative:  y = g · (1 + s + h) + ε
//! ```
//!
//! `g` is piecewise linear (or logistic) in normalised time with changepoints
//! in the first part of the history, `s` is a sum of Fourier series over
//! absolute hours and `h` a sum of holiday indicators. Rate adjustments get
//! an L1 penalty, seasonal and holiday coefficients an L2 penalty.
//!
//! Internally the series is divided by its maximum absolute value. Trend
//! parameters stored on a fit are on that scale; [`DecomposableFit::trend_at`]
//! and the forecast map back to counts.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use chrono::{DateTime, NaiveDate, Utc};
use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ForecastResult, ModelParams, ModelSpec};
use crate::ingest::ContainerCategory;
use crate::optim::numeric_gradient;
use crate::series::{CalendarSpec, StockSeries, TimeIndex};

const MAX_ITER: usize = 2000;
const MAX_OUTER: usize = 200;
const LOGISTIC_INNER: usize = 50;
const REL_TOL: f64 = 1e-8;
const TREND_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonalityMode {
    Additive,
    Multiplicative,
}

impl SeasonalityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Additive => "additive",
            Self::Multiplicative => "multiplicative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendKind {
    PiecewiseLinear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalityConfig {
    pub name: String,
    pub period_hours: f64,
    pub fourier_order: usize,
    pub enabled: bool,
}

impl SeasonalityConfig {
    pub fn new(name: &str, period_hours: f64, fourier_order: usize, enabled: bool) -> Self {
        Self { name: name.into(), period_hours, fourier_order, enabled }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposableConfig {
    pub changepoint_prior_scale: f64,
    pub seasonality_prior_scale: f64,
    /// Prior scale ν of the holiday effects.
    pub holiday_prior_scale: f64,
    pub mode: SeasonalityMode,
    pub trend: TrendKind,
    /// Carrying capacity for the logistic trend; 1.2 × the training maximum
    /// when absent.
    pub capacity: Option<f64>,
    pub seasonalities: Vec<SeasonalityConfig>,
    pub n_changepoints: usize,
    pub changepoint_range: f64,
}

impl Default for DecomposableConfig {
    fn default() -> Self {
        Self {
            changepoint_prior_scale: 0.05,
            seasonality_prior_scale: 10.0,
            holiday_prior_scale: 10.0,
            mode: SeasonalityMode::Additive,
            trend: TrendKind::PiecewiseLinear,
            capacity: None,
            seasonalities: vec![
                SeasonalityConfig::new("yearly", 8766.0, 10, true),
                SeasonalityConfig::new("weekly", 168.0, 3, false),
                SeasonalityConfig::new("daily", 24.0, 4, false),
            ],
            n_changepoints: 25,
            changepoint_range: 0.8,
        }
    }
}

impl DecomposableConfig {
    /// Multiplicative yearly-only model with both prior scales at 0.01.
    pub fn tuned() -> Self {
        Self {
            changepoint_prior_scale: 0.01,
            seasonality_prior_scale: 0.01,
            mode: SeasonalityMode::Multiplicative,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("changepoint_prior_scale", self.changepoint_prior_scale)?;
        positive("seasonality_prior_scale", self.seasonality_prior_scale)?;
        positive("holiday_prior_scale", self.holiday_prior_scale)?;
        if !(self.changepoint_range > 0.0 && self.changepoint_range <= 1.0) {
            return Err(Error::Config(format!("changepoint_range must be in (0, 1], got {}", self.changepoint_range)));
        }
        if let Some(c) = self.capacity {
            positive("capacity", c)?;
        }
        for s in self.seasonalities.iter().filter(|s| s.enabled) {
            if !(s.period_hours > 0.0) || s.fourier_order == 0 {
                return Err(Error::Config(format!("seasonality '{}' needs a positive period and order", s.name)));
            }
        }
        Ok(())
    }

    fn enabled(&self) -> impl Iterator<Item = &SeasonalityConfig> {
        self.seasonalities.iter().filter(|s| s.enabled)
    }

    /// Basis columns before holidays.
    pub fn n_columns(&self) -> usize {
        2 + self.n_changepoints + self.enabled().map(|s| 2 * s.fourier_order).sum::<usize>()
    }

    pub fn min_length(&self) -> usize {
        let longest = self.enabled().map(|s| s.period_hours.ceil() as usize).max().unwrap_or(0);
        (2 * self.n_columns()).max(longest)
    }
}

/// Maps timestamps to normalised time: 0 at the first training hour, 1 at
/// the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeScale {
    pub t0: DateTime<Utc>,
    pub span_hours: f64,
}

impl TimeScale {
    pub fn of(index: &TimeIndex) -> Self {
        Self { t0: index.start(), span_hours: ((index.len() - 1) as f64).max(1.0) }
    }

    pub fn normalize(&self, ts: DateTime<Utc>) -> f64 {
        (ts - self.t0).num_hours() as f64 / self.span_hours
    }
}

fn absolute_hours(ts: DateTime<Utc>) -> f64 {
    (ts.timestamp() / 3600) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSpec {
    pub kind: TrendKind,
    pub k: f64,
    pub m: f64,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub changepoints: Vec<DateTime<Utc>>,
    /// Changepoints in normalised time.
    pub changepoints_t: Vec<f64>,
    /// Scaled carrying capacity (logistic only).
    pub capacity: Option<f64>,
}

fn linear_gamma(cps: &[f64], delta: &[f64]) -> Vec<f64> {
    cps.iter().zip(delta).map(|(s, d)| -s * d).collect()
}

fn logistic_gamma(cps: &[f64], k: f64, m: f64, delta: &[f64]) -> Vec<f64> {
    let mut gamma = Vec::with_capacity(cps.len());
    let mut rate = k;
    let mut offset = m;
    for (s, d) in cps.iter().zip(delta) {
        let next = rate + d;
        let g = if next.abs() > 1e-300 { (s - offset) * (1.0 - rate / next) } else { 0.0 };
        gamma.push(g);
        offset += g;
        rate = next;
    }
    gamma
}

impl TrendSpec {
    /// Trend at normalised time `t` on the internal scale.
    pub fn value(&self, t: f64) -> f64 {
        let mut rate = self.k;
        let mut offset = self.m;
        for ((s, d), g) in self.changepoints_t.iter().zip(&self.delta).zip(&self.gamma) {
            if t >= *s {
                rate += d;
                offset += g;
            }
        }
        match self.kind {
            TrendKind::PiecewiseLinear => rate * t + offset,
            TrendKind::Logistic => self.capacity.unwrap_or(1.0) / (1.0 + (-rate * (t - offset)).exp()),
        }
    }

    fn with_params(&self, theta: &[f64]) -> Self {
        let (k, m, delta) = (theta[0], theta[1], theta[2..].to_vec());
        let gamma = match self.kind {
            TrendKind::PiecewiseLinear => linear_gamma(&self.changepoints_t, &delta),
            TrendKind::Logistic => logistic_gamma(&self.changepoints_t, k, m, &delta),
        };
        Self { k, m, delta, gamma, ..self.clone() }
    }

    fn params(&self) -> Vec<f64> {
        let mut v = vec![self.k, self.m];
        v.extend_from_slice(&self.delta);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalitySpec {
    pub name: String,
    pub period_hours: f64,
    pub fourier_order: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub enabled: bool,
}

impl SeasonalitySpec {
    pub fn value(&self, ts: DateTime<Utc>) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        let t = absolute_hours(ts);
        (0..self.fourier_order)
            .map(|i| {
                let x = 2.0 * PI * (i + 1) as f64 * t / self.period_hours;
                self.a[i] * x.cos() + self.b[i] * x.sin()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolidaySpec {
    pub names: Vec<String>,
    pub dates: Vec<BTreeSet<NaiveDate>>,
    pub kappa: Vec<f64>,
    pub nu: f64,
}

impl HolidaySpec {
    pub fn value(&self, ts: DateTime<Utc>) -> f64 {
        let date = ts.date_naive();
        self.dates.iter().zip(&self.kappa).filter(|(d, _)| d.contains(&date)).map(|(_, k)| k).sum()
    }
}

/// Basis matrices for one index. Rows follow the index.
#[derive(Debug, Clone)]
pub struct Features {
    /// Normalised time.
    pub t: Vec<f64>,
    pub changepoints_t: Vec<f64>,
    /// `a(t)`: 1 where `t` is at or past changepoint `j`.
    pub a: DMatrix<f64>,
    /// cos/sin pairs for n = 1..N of each enabled seasonality, in order.
    pub seasonal: DMatrix<f64>,
    /// One indicator column per holiday.
    pub holidays: DMatrix<f64>,
}

fn place_changepoints(n: usize, config: &DecomposableConfig, scale: &TimeScale) -> Vec<f64> {
    if config.n_changepoints == 0 || n < 3 {
        return Vec::new();
    }
    let last = config.changepoint_range * (n - 1) as f64;
    let mut idx: Vec<usize> = (1..=config.n_changepoints)
        .map(|j| (j as f64 * last / config.n_changepoints as f64).round() as usize)
        .filter(|&i| i > 0 && i < n)
        .collect();
    idx.dedup();
    idx.into_iter().map(|i| i as f64 / scale.span_hours).collect()
}

fn seasonal_columns(ts: DateTime<Utc>, seasons: &[(f64, usize)]) -> Vec<f64> {
    let t = absolute_hours(ts);
    let mut row = Vec::new();
    for &(period, order) in seasons {
        for n in 1..=order {
            let x = 2.0 * PI * n as f64 * t / period;
            row.push(x.cos());
            row.push(x.sin());
        }
    }
    row
}

fn design(
    index: &TimeIndex,
    scale: &TimeScale,
    changepoints_t: Vec<f64>,
    seasons: &[(f64, usize)],
    holidays: &[BTreeSet<NaiveDate>],
) -> Features {
    let n = index.len();
    let t: Vec<f64> = index.iter().map(|ts| scale.normalize(ts)).collect();
    let a = DMatrix::from_fn(n, changepoints_t.len(), |i, j| if t[i] >= changepoints_t[j] { 1.0 } else { 0.0 });
    let width: usize = seasons.iter().map(|(_, o)| 2 * o).sum();
    let mut seasonal = DMatrix::zeros(n, width);
    for (i, ts) in index.iter().enumerate() {
        for (j, v) in seasonal_columns(ts, seasons).into_iter().enumerate() {
            seasonal[(i, j)] = v;
        }
    }
    let holidays = DMatrix::from_fn(n, holidays.len(), |i, j| {
        if holidays[j].contains(&index.at(i).date_naive()) {
            1.0
        } else {
            0.0
        }
    });
    Features { t, changepoints_t, a, seasonal, holidays }
}

fn season_list(config: &DecomposableConfig) -> Vec<(f64, usize)> {
    config.enabled().map(|s| (s.period_hours, s.fourier_order)).collect()
}

/// Builds the trend, seasonal and holiday bases for a training index.
pub fn build_features(index: &TimeIndex, config: &DecomposableConfig, cal: &CalendarSpec) -> Features {
    let scale = TimeScale::of(index);
    let cps = place_changepoints(index.len(), config, &scale);
    let holidays: Vec<BTreeSet<NaiveDate>> = cal.holidays.values().cloned().collect();
    design(index, &scale, cps, &season_list(config), &holidays)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposableFit {
    pub config: DecomposableConfig,
    pub scale: TimeScale,
    /// Counts are divided by this before fitting.
    pub y_scale: f64,
    pub trend: TrendSpec,
    pub seasonalities: Vec<SeasonalitySpec>,
    pub holidays: HolidaySpec,
    pub mode: SeasonalityMode,
    /// Residual standard deviation in counts.
    pub sigma: f64,
    /// Penalised objective at the optimum, on the internal scale.
    pub objective: f64,
    pub iterations: usize,
    /// Set when the multiplicative trend had to be floored on the training
    /// range.
    pub trend_floored: bool,
    pub origin: DateTime<Utc>,
    pub category: ContainerCategory,
}

impl DecomposableFit {
    /// Trend in counts at `ts`.
    pub fn trend_at(&self, ts: DateTime<Utc>) -> f64 {
        self.trend.value(self.scale.normalize(ts)) * self.y_scale
    }

    pub fn seasonal_at(&self, ts: DateTime<Utc>) -> f64 {
        self.seasonalities.iter().map(|s| s.value(ts)).sum()
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = a.clone().cholesky() {
        return ch.solve(b);
    }
    a.clone().svd(true, true).solve(b, 1e-12).unwrap_or_else(|_| DVector::zeros(b.len()))
}

/// Minimises `½ xᵀAx − bᵀx + c + Σ l1_i |x_i|` by accelerated proximal
/// gradient with a diagonal preconditioner. Returns the minimiser and the
/// iteration count.
fn fista(a: &DMatrix<f64>, b: &DVector<f64>, c: f64, l1: &[f64], x0: &DVector<f64>) -> (DVector<f64>, usize) {
    let p = b.len();
    if p == 0 {
        return (DVector::zeros(0), 0);
    }
    let d: Vec<f64> = (0..p).map(|i| if a[(i, i)] > 0.0 { a[(i, i)].sqrt() } else { 1.0 }).collect();
    let at = DMatrix::from_fn(p, p, |i, j| a[(i, j)] / (d[i] * d[j]));
    let bt = DVector::from_fn(p, |i, _| b[i] / d[i]);
    let lt: Vec<f64> = (0..p).map(|i| l1[i] / d[i]).collect();
    let lip = at.clone().symmetric_eigenvalues().max().max(1e-300);
    let step = 1.0 / lip;
    let objective = |z: &DVector<f64>| {
        0.5 * z.dot(&(&at * z)) - bt.dot(z) + c + z.iter().zip(&lt).map(|(v, l)| l * v.abs()).sum::<f64>()
    };
    let prox_step = |z: &DVector<f64>| {
        let g = &at * z - &bt;
        DVector::from_fn(p, |i, _| soft_threshold(z[i] - step * g[i], step * lt[i]))
    };

    let mut x = DVector::from_fn(p, |i, _| x0[i] * d[i]);
    let mut y = x.clone();
    let mut tk: f64 = 1.0;
    let mut f_prev = objective(&x);
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut xn = prox_step(&y);
        let mut f_new = objective(&xn);
        if f_new > f_prev {
            // Momentum overshot; restart from a plain proximal step.
            tk = 1.0;
            xn = prox_step(&x);
            f_new = objective(&xn);
        }
        let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        y = &xn + (&xn - &x) * ((tk - 1.0) / t_next);
        let rel = (f_prev - f_new).abs() / f_prev.abs().max(1e-300);
        x = xn;
        f_prev = f_new;
        tk = t_next;
        if rel < REL_TOL {
            break;
        }
    }
    (DVector::from_fn(p, |i, _| x[i] / d[i]), iterations)
}

/// Everything the objective needs, on the internal scale.
struct Problem<'a> {
    y: &'a [f64],
    feats: &'a Features,
    /// Seasonal and holiday columns side by side.
    z: DMatrix<f64>,
    /// L2 weight per column of `z`.
    l2: Vec<f64>,
    l1: f64,
    inv_var: f64,
    mode: SeasonalityMode,
}

impl Problem<'_> {
    fn trend_values(&self, trend: &TrendSpec) -> Vec<f64> {
        self.feats.t.iter().map(|&t| trend.value(t)).collect()
    }

    fn objective(&self, g: &[f64], beta: &DVector<f64>, trend: &TrendSpec) -> f64 {
        let c = &self.z * beta;
        let data: f64 = self
            .y
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let fitted = match self.mode {
                    SeasonalityMode::Additive => g[i] + c[i],
                    SeasonalityMode::Multiplicative => g[i] * (1.0 + c[i]),
                };
                (y - fitted).powi(2)
            })
            .sum();
        0.5 * self.inv_var * data
            + self.l1 * trend.delta.iter().map(|d| d.abs()).sum::<f64>()
            + 0.5 * beta.iter().zip(&self.l2).map(|(b, l)| l * b * b).sum::<f64>()
    }

    fn linear_trend_basis(&self) -> DMatrix<f64> {
        let cps = &self.feats.changepoints_t;
        DMatrix::from_fn(self.y.len(), 2 + cps.len(), |i, j| {
            let t = self.feats.t[i];
            match j {
                0 => t,
                1 => 1.0,
                _ => (t - cps[j - 2]).max(0.0) * self.feats.a[(i, j - 2)],
            }
        })
    }

    fn trend_l1(&self, width: usize) -> Vec<f64> {
        (0..width).map(|j| if j < 2 { 0.0 } else { self.l1 }).collect()
    }

    /// Exact joint solve for the additive piecewise-linear case.
    fn fit_additive_linear(&self, trend: TrendSpec) -> (TrendSpec, DVector<f64>, usize) {
        let xt = self.linear_trend_basis();
        let nt = xt.ncols();
        let x = DMatrix::from_fn(self.y.len(), nt + self.z.ncols(), |i, j| {
            if j < nt {
                xt[(i, j)]
            } else {
                self.z[(i, j - nt)]
            }
        });
        let yv = DVector::from_column_slice(self.y);
        let mut a = x.transpose() * &x * self.inv_var;
        for (j, l) in self.l2.iter().enumerate() {
            a[(nt + j, nt + j)] += l;
        }
        let b = x.transpose() * &yv * self.inv_var;
        let c = 0.5 * self.inv_var * yv.dot(&yv);
        let mut l1 = self.trend_l1(nt);
        l1.extend(std::iter::repeat_n(0.0, self.z.ncols()));
        let start = solve_spd(&a, &b);
        let (theta, iters) = fista(&a, &b, c, &l1, &start);
        let trend = trend.with_params(theta.rows(0, nt).as_slice());
        (trend, theta.rows(nt, self.z.ncols()).into_owned(), iters)
    }

    fn solve_components(&self, g: &[f64]) -> DVector<f64> {
        let p = self.z.ncols();
        if p == 0 {
            return DVector::zeros(0);
        }
        let m = match self.mode {
            SeasonalityMode::Additive => self.z.clone(),
            SeasonalityMode::Multiplicative => DMatrix::from_fn(self.y.len(), p, |i, j| g[i] * self.z[(i, j)]),
        };
        let u = DVector::from_fn(self.y.len(), |i, _| self.y[i] - g[i]);
        let mut a = m.transpose() * &m * self.inv_var;
        for (j, l) in self.l2.iter().enumerate() {
            a[(j, j)] += l;
        }
        solve_spd(&a, &(m.transpose() * u * self.inv_var))
    }

    /// Weights and target such that the data term is Σ (target − w·g)².
    fn trend_target(&self, c: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        match self.mode {
            SeasonalityMode::Additive => (vec![1.0; self.y.len()], self.y.iter().zip(c.iter()).map(|(y, c)| y - c).collect()),
            SeasonalityMode::Multiplicative => (c.iter().map(|c| 1.0 + c).collect(), self.y.to_vec()),
        }
    }

    fn solve_linear_trend(&self, trend: &TrendSpec, w: &[f64], target: &[f64]) -> (TrendSpec, usize) {
        let xt = self.linear_trend_basis();
        let xw = DMatrix::from_fn(xt.nrows(), xt.ncols(), |i, j| w[i] * xt[(i, j)]);
        let tv = DVector::from_column_slice(target);
        let a = xw.transpose() * &xw * self.inv_var;
        let b = xw.transpose() * &tv * self.inv_var;
        let c = 0.5 * self.inv_var * tv.dot(&tv);
        let (theta, iters) = fista(&a, &b, c, &self.trend_l1(xt.ncols()), &DVector::from_vec(trend.params()));
        (trend.with_params(theta.as_slice()), iters)
    }

    /// Proximal gradient on the logistic trend with numerical gradients.
    fn solve_logistic_trend(&self, trend: &TrendSpec, w: &[f64], target: &[f64], step: &mut f64) -> (TrendSpec, usize) {
        let smooth = |theta: &[f64]| {
            let tr = trend.with_params(theta);
            let sse: f64 = self.feats.t.iter().enumerate().map(|(i, &t)| (target[i] - w[i] * tr.value(t)).powi(2)).sum();
            let v = 0.5 * self.inv_var * sse;
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let l1 = self.trend_l1(2 + trend.delta.len());
        let penalty = |theta: &[f64]| theta.iter().zip(&l1).map(|(v, l)| l * v.abs()).sum::<f64>();
        let mut theta = trend.params();
        let mut f = smooth(&theta);
        let mut iterations = 0;
        for _ in 0..LOGISTIC_INNER {
            iterations += 1;
            let grad = numeric_gradient(&smooth, &theta, 1e-6);
            let mut accepted = None;
            while *step > 1e-20 {
                let cand: Vec<f64> =
                    (0..theta.len()).map(|i| soft_threshold(theta[i] - *step * grad[i], *step * l1[i])).collect();
                let fc = smooth(&cand);
                let diff: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
                let bound = f
                    + grad.iter().zip(&diff).map(|(g, d)| g * d).sum::<f64>()
                    + diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * *step);
                if fc <= bound {
                    accepted = Some((cand, fc));
                    break;
                }
                *step *= 0.5;
            }
            let Some((cand, fc)) = accepted else { break };
            let before = f + penalty(&theta);
            let after = fc + penalty(&cand);
            theta = cand;
            f = fc;
            *step *= 2.0;
            if (before - after).abs() / before.abs().max(1e-300) < REL_TOL {
                break;
            }
        }
        (trend.with_params(&theta), iterations)
    }

    /// Block coordinate descent: components by ridge, then the trend.
    fn fit_alternating(&self, mut trend: TrendSpec) -> Result<(TrendSpec, DVector<f64>, usize)> {
        let mut beta = DVector::zeros(self.z.ncols());
        let mut iterations = 0;
        let mut step = 1.0;
        let mut prev = f64::INFINITY;
        for _ in 0..MAX_OUTER {
            let g = self.trend_values(&trend);
            beta = self.solve_components(&g);
            let c = &self.z * &beta;
            let (w, target) = self.trend_target(&c);
            let (next, iters) = match trend.kind {
                TrendKind::PiecewiseLinear => self.solve_linear_trend(&trend, &w, &target),
                TrendKind::Logistic => self.solve_logistic_trend(&trend, &w, &target, &mut step),
            };
            trend = next;
            iterations += iters;
            let obj = self.objective(&self.trend_values(&trend), &beta, &trend);
            if !obj.is_finite() {
                return Err(Error::FitFailure(format!("objective became non-finite after {iterations} iterations")));
            }
            if prev.is_finite() && (prev - obj).abs() / prev.abs().max(1e-300) < REL_TOL {
                break;
            }
            prev = obj;
        }
        Ok((trend, beta, iterations))
    }
}

fn initial_trend(kind: TrendKind, feats: &Features, y: &[f64], capacity: Option<f64>) -> TrendSpec {
    let ncp = feats.changepoints_t.len();
    let base = TrendSpec {
        kind,
        k: 0.0,
        m: 0.0,
        delta: vec![0.0; ncp],
        gamma: vec![0.0; ncp],
        changepoints: Vec::new(),
        changepoints_t: feats.changepoints_t.clone(),
        capacity,
    };
    let n = y.len() as f64;
    let (tm, ym) = (feats.t.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    match kind {
        TrendKind::PiecewiseLinear => {
            let (sxy, sxx) = feats.t.iter().zip(y).fold((0.0, 0.0), |(sxy, sxx), (t, y)| {
                (sxy + (t - tm) * (y - ym), sxx + (t - tm) * (t - tm))
            });
            let k = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            base.with_params(&[&[k, ym - k * tm][..], &vec![0.0; ncp]].concat())
        }
        TrendKind::Logistic => {
            // Straight line through logit(y / C) = k (t − m).
            let c = capacity.unwrap_or(1.0);
            let z: Vec<f64> = y.iter().map(|v| (v / c).clamp(0.01, 0.99)).map(|p| (p / (1.0 - p)).ln()).collect();
            let zm = z.iter().sum::<f64>() / n;
            let (sxy, sxx) = feats.t.iter().zip(&z).fold((0.0, 0.0), |(sxy, sxx), (t, z)| {
                (sxy + (t - tm) * (z - zm), sxx + (t - tm) * (t - tm))
            });
            let k = if sxx > 0.0 && sxy != 0.0 { sxy / sxx } else { 1.0 };
            let m = tm - zm / k;
            base.with_params(&[&[k, m][..], &vec![0.0; ncp]].concat())
        }
    }
}

pub fn fit_decomposable(series: &StockSeries, config: &DecomposableConfig, cal: &CalendarSpec) -> Result<DecomposableFit> {
    config.validate()?;
    let holiday_names: Vec<String> = cal.holidays.keys().cloned().collect();
    let required = config.min_length().max(2 * (config.n_columns() + holiday_names.len()));
    if series.len() < required {
        return Err(Error::InsufficientData { required, actual: series.len() });
    }
    let raw = series.to_f64();
    let max = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let y_scale = if max > 0.0 { max } else { 1.0 };
    let y: Vec<f64> = raw.iter().map(|v| v / y_scale).collect();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sigma0 = if sd > 0.0 { sd } else { 1.0 };

    let capacity = match config.trend {
        TrendKind::PiecewiseLinear => None,
        TrendKind::Logistic => {
            let c = config.capacity.unwrap_or(1.2 * max);
            if !(c > 0.0) {
                return Err(Error::Degenerate("logistic trend needs a positive capacity".into()));
            }
            Some(c / y_scale)
        }
    };

    let feats = build_features(series.index(), config, cal);
    let seasons = season_list(config);
    let n_seasonal = feats.seasonal.ncols();
    let n_holiday = feats.holidays.ncols();
    let z = DMatrix::from_fn(series.len(), n_seasonal + n_holiday, |i, j| {
        if j < n_seasonal {
            feats.seasonal[(i, j)]
        } else {
            feats.holidays[(i, j - n_seasonal)]
        }
    });
    let mut l2 = vec![1.0 / config.seasonality_prior_scale.powi(2); n_seasonal];
    l2.extend(std::iter::repeat_n(1.0 / config.holiday_prior_scale.powi(2), n_holiday));
    let problem = Problem {
        y: &y,
        feats: &feats,
        z,
        l2,
        l1: 1.0 / config.changepoint_prior_scale,
        inv_var: 1.0 / (sigma0 * sigma0),
        mode: config.mode,
    };

    let mut trend0 = initial_trend(config.trend, &feats, &y, capacity);
    let scale = TimeScale::of(series.index());
    trend0.changepoints =
        feats.changepoints_t.iter().map(|t| scale.t0 + chrono::Duration::hours((t * scale.span_hours).round() as i64)).collect();

    let (trend, beta, iterations) = match (config.trend, config.mode) {
        (TrendKind::PiecewiseLinear, SeasonalityMode::Additive) => problem.fit_additive_linear(trend0),
        _ => problem.fit_alternating(trend0)?,
    };
    let g = problem.trend_values(&trend);
    let objective = problem.objective(&g, &beta, &trend);
    if !objective.is_finite() || beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitFailure(format!("non-finite objective after {iterations} iterations")));
    }
    let trend_floored = config.mode == SeasonalityMode::Multiplicative && g.iter().any(|v| *v <= TREND_FLOOR);
    if trend_floored {
        warn!("multiplicative trend falls to or below zero on the training range; flooring at {TREND_FLOOR}");
    }

    let mut offset = 0;
    let seasonalities = config
        .seasonalities
        .iter()
        .map(|s| {
            let (a, b) = if s.enabled {
                let coef = &beta.as_slice()[offset..offset + 2 * s.fourier_order];
                offset += 2 * s.fourier_order;
                (coef.iter().step_by(2).copied().collect(), coef.iter().skip(1).step_by(2).copied().collect())
            } else {
                (Vec::new(), Vec::new())
            };
            SeasonalitySpec {
                name: s.name.clone(),
                period_hours: s.period_hours,
                fourier_order: if s.enabled { s.fourier_order } else { 0 },
                a,
                b,
                enabled: s.enabled,
            }
        })
        .collect();
    debug_assert_eq!(offset, seasons.iter().map(|(_, o)| 2 * o).sum::<usize>());
    let holidays = HolidaySpec {
        names: holiday_names,
        dates: cal.holidays.values().cloned().collect(),
        kappa: beta.as_slice()[n_seasonal..].to_vec(),
        nu: config.holiday_prior_scale,
    };

    let mut fit = DecomposableFit {
        config: config.clone(),
        scale,
        y_scale,
        trend,
        seasonalities,
        holidays,
        mode: config.mode,
        sigma: 0.0,
        objective,
        iterations,
        trend_floored,
        origin: series.index().last(),
        category: series.category(),
    };
    let fitted = components(&fit, series.index()).combined;
    fit.sigma = (raw.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum::<f64>() / n).sqrt();
    Ok(fit)
}

struct Components {
    trend: Vec<f64>,
    seasonal: Vec<f64>,
    holiday: Vec<f64>,
    combined: Vec<f64>,
}

fn components(fit: &DecomposableFit, index: &TimeIndex) -> Components {
    let mut floored = false;
    let mut out = Components { trend: vec![], seasonal: vec![], holiday: vec![], combined: vec![] };
    for ts in index.iter() {
        let mut g = fit.trend.value(fit.scale.normalize(ts));
        let s = fit.seasonal_at(ts);
        let h = fit.holidays.value(ts);
        let y = match fit.mode {
            SeasonalityMode::Additive => g + s + h,
            SeasonalityMode::Multiplicative => {
                if g <= TREND_FLOOR {
                    floored = true;
                    g = TREND_FLOOR;
                }
                g * (1.0 + s + h)
            }
        };
        out.trend.push(g * fit.y_scale);
        let unit = if fit.mode == SeasonalityMode::Additive { fit.y_scale } else { 1.0 };
        out.seasonal.push(s * unit);
        out.holiday.push(h * unit);
        out.combined.push(y * fit.y_scale);
    }
    if floored {
        warn!("multiplicative trend floored at {TREND_FLOOR}");
    }
    out
}

/// Forecast plus the per-component breakdown. Trend is in counts; seasonal
/// and holiday terms are in counts for additive fits and relative for
/// multiplicative ones.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposableForecast {
    pub result: ForecastResult,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub holiday: Vec<f64>,
}

pub fn predict_decomposable(fit: &DecomposableFit, index: &TimeIndex) -> Result<DecomposableForecast> {
    let c = components(fit, index);
    let origin = index.start() - chrono::Duration::hours(1);
    let result = ForecastResult::new(
        origin,
        c.combined,
        ModelSpec { params: ModelParams::Decomposable(fit.config.clone()), seed: 0 },
        fit.category,
    )?;
    Ok(DecomposableForecast { result, trend: c.trend, seasonal: c.seasonal, holiday: c.holiday })
}

pub fn forecast_decomposable(fit: &DecomposableFit, horizon_hours: usize) -> Result<ForecastResult> {
    if horizon_hours == 0 {
        return Err(Error::Config("forecast horizon must be at least one hour".into()));
    }
    let index = TimeIndex::new(fit.origin + chrono::Duration::hours(1), horizon_hours)?;
    Ok(predict_decomposable(fit, &index)?.result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2022, 1, 3, 0, 0, 0).unwrap()
    }

    fn series(values: Vec<u32>) -> StockSeries {
        StockSeries::new(TimeIndex::new(start(), values.len()).unwrap(), values, ContainerCategory::Standard).unwrap()
    }

    fn bare() -> DecomposableConfig {
        DecomposableConfig {
            seasonalities: vec![SeasonalityConfig::new("yearly", 8766.0, 10, false)],
            n_changepoints: 0,
            ..Default::default()
        }
    }

    #[test]
    fn feature_shapes_and_indicators() {
        let index = TimeIndex::new(start(), 100).unwrap();
        let cfg = DecomposableConfig {
            seasonalities: vec![SeasonalityConfig::new("yearly", 8766.0, 1, true)],
            n_changepoints: 0,
            ..Default::default()
        };
        let f = build_features(&index, &cfg, &CalendarSpec::default());
        assert_eq!(f.seasonal.ncols(), 2);
        assert_eq!(f.holidays.ncols(), 0);
        assert_eq!(f.t[0], 0.0);
        assert_eq!(f.t[99], 1.0);

        let day = start().date_naive() + Duration::days(2);
        let cal = CalendarSpec::default().with_holiday("x", [day]);
        let f = build_features(&index, &DecomposableConfig { n_changepoints: 4, ..cfg }, &cal);
        for (i, ts) in index.iter().enumerate() {
            assert_eq!(f.holidays[(i, 0)], if ts.date_naive() == day { 1.0 } else { 0.0 });
        }
        // Closed on the left: the changepoint row itself is switched on.
        for (j, cp) in f.changepoints_t.iter().enumerate() {
            let i = f.t.iter().position(|t| t == cp).unwrap();
            assert_eq!(f.a[(i, j)], 1.0);
            assert_eq!(f.a[(i - 1, j)], 0.0);
        }
        assert_eq!(f.changepoints_t.len(), 4);
        assert!(f.changepoints_t.iter().all(|t| *t <= 0.8));
    }

    #[test]
    fn recovers_a_line() {
        let s = series((0..500).map(|i| 2 * i + 5).collect());
        let fit = fit_decomposable(&s, &bare(), &CalendarSpec::default()).unwrap();
        let t0 = s.index().start();
        let m = fit.trend_at(t0);
        let k = fit.trend_at(t0 + Duration::hours(1)) - m;
        assert!((k - 2.0).abs() < 1e-3 && (m - 5.0).abs() < 1e-3, "k={k} m={m}");
        assert!(fit.seasonalities.iter().all(|s| s.a.is_empty()));
    }

    #[test]
    fn zero_series_gives_zero_parameters() {
        let cfg = DecomposableConfig {
            seasonalities: vec![SeasonalityConfig::new("weekly", 168.0, 3, true)],
            n_changepoints: 5,
            ..Default::default()
        };
        let fit = fit_decomposable(&series(vec![0; 400]), &cfg, &CalendarSpec::default()).unwrap();
        assert!(fit.trend.params().iter().all(|v| v.abs() < 1e-12));
        assert!(fit.seasonalities[0].a.iter().chain(&fit.seasonalities[0].b).all(|v| v.abs() < 1e-12));
    }

    fn multiplicative_amplitude(level: f64, sigma: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, sigma).unwrap();
        let values = (0..2 * 8760)
            .map(|t| {
                let y = level * (1.0 + 0.3 * (2.0 * PI * t as f64 / 8760.0).sin()) + noise.sample(&mut rng);
                y.round().max(0.0) as u32
            })
            .collect();
        let s = series(values);
        let cfg = DecomposableConfig {
            mode: SeasonalityMode::Multiplicative,
            seasonalities: vec![SeasonalityConfig::new("yearly", 8760.0, 3, true)],
            n_changepoints: 0,
            ..Default::default()
        };
        let fit = fit_decomposable(&s, &cfg, &CalendarSpec::default()).unwrap();
        let grid: Vec<f64> = (0..8760).map(|h| fit.seasonal_at(start() + Duration::hours(h))).collect();
        let (lo, hi) = grid.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        (hi - lo) / 2.0
    }

    #[test]
    fn recovers_multiplicative_amplitude() {
        let a = multiplicative_amplitude(10.0, 0.2);
        assert!((a - 0.3).abs() < 0.05, "{a}");
        let a = multiplicative_amplitude(1000.0, 200.0);
        assert!((a - 0.3).abs() < 0.05, "{a}");
    }

    #[test]
    fn piecewise_trend_is_continuous_with_expected_slopes() {
        let cfg = DecomposableConfig { n_changepoints: 6, ..bare() };
        let s = series((0..600u32).map(|i| if i < 300 { 100 + i } else { 400 - (i - 300) / 2 }).collect());
        let fit = fit_decomposable(&s, &cfg, &CalendarSpec::default()).unwrap();
        let tr = &fit.trend;
        let mut slope = tr.k;
        for (j, cp) in tr.changepoints_t.iter().enumerate() {
            assert!((tr.value(cp - 1e-12) - tr.value(*cp)).abs() < 1e-9);
            let before = (tr.value(cp - 1e-6) - tr.value(cp - 2e-6)) / 1e-6;
            let after = (tr.value(cp + 2e-6) - tr.value(cp + 1e-6)) / 1e-6;
            assert!((before - slope).abs() < 1e-5);
            slope += tr.delta[j];
            assert!((after - slope).abs() < 1e-5);
        }
    }

    #[test]
    fn seasonal_component_integrates_to_zero() {
        let s = series((0..2000).map(|i| 100 + (i % 24) * 3 + (i % 168) / 10).collect());
        let cfg = DecomposableConfig {
            seasonalities: vec![SeasonalityConfig::new("daily", 24.0, 4, true)],
            n_changepoints: 3,
            ..Default::default()
        };
        let fit = fit_decomposable(&s, &cfg, &CalendarSpec::default()).unwrap();
        let sp = &fit.seasonalities[0];
        let amp = sp.a.iter().chain(&sp.b).map(|v| v.abs()).sum::<f64>();
        assert!(amp > 0.0);
        // Dense grid over one period, on the internal scale.
        let steps = 24 * 360;
        let mean = (0..steps)
            .map(|i| {
                let t = i as f64 / 360.0;
                (1..=4)
                    .map(|n| {
                        let x = 2.0 * PI * n as f64 * t / 24.0;
                        sp.a[n - 1] * x.cos() + sp.b[n - 1] * x.sin()
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            / steps as f64;
        assert!(mean.abs() < 1e-6 * amp);
    }

    #[test]
    fn looser_changepoint_prior_never_raises_the_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 5.0).unwrap();
        let s = series(
            (0..1500)
                .map(|i| {
                    let kink = if i > 700 { (i - 700) as f64 * 0.3 } else { 0.0 };
                    (200.0 + 0.05 * i as f64 - kink + noise.sample(&mut rng)).max(0.0) as u32
                })
                .collect(),
        );
        let mut last = f64::INFINITY;
        for cps in [0.001, 0.01, 0.1, 0.5, 5.0] {
            let cfg = DecomposableConfig { changepoint_prior_scale: cps, n_changepoints: 10, ..bare() };
            let fit = fit_decomposable(&s, &cfg, &CalendarSpec::default()).unwrap();
            assert!(fit.objective <= last * (1.0 + 1e-9), "cps={cps}: {} > {last}", fit.objective);
            last = fit.objective;
        }
    }

    #[test]
    fn vanishing_priors_reduce_to_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 4.0).unwrap();
        let s = series((0..600).map(|i| (50.0 + 0.1 * i as f64 + 10.0 * (i as f64 / 9.0).sin() + noise.sample(&mut rng)) as u32).collect());
        let day = start().date_naive() + Duration::days(3);
        let cal = CalendarSpec::default().with_holiday("h", [day]);
        let cfg = DecomposableConfig {
            changepoint_prior_scale: f64::INFINITY,
            seasonality_prior_scale: f64::INFINITY,
            holiday_prior_scale: f64::INFINITY,
            seasonalities: vec![SeasonalityConfig::new("weekly", 168.0, 2, true)],
            n_changepoints: 3,
            ..Default::default()
        };
        let fit = fit_decomposable(&s, &cfg, &cal).unwrap();
        let fitted = components(&fit, s.index()).combined;

        let f = build_features(s.index(), &cfg, &cal);
        let cps = &f.changepoints_t;
        let width = 2 + cps.len() + f.seasonal.ncols() + f.holidays.ncols();
        let x = DMatrix::from_fn(s.len(), width, |i, j| {
            let t = f.t[i];
            if j == 0 {
                t
            } else if j == 1 {
                1.0
            } else if j < 2 + cps.len() {
                (t - cps[j - 2]).max(0.0)
            } else if j < 2 + cps.len() + f.seasonal.ncols() {
                f.seasonal[(i, j - 2 - cps.len())]
            } else {
                f.holidays[(i, j - 2 - cps.len() - f.seasonal.ncols())]
            }
        });
        let y = DVector::from_vec(s.to_f64());
        let beta = x.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        let ols = &x * beta;
        for (a, b) in fitted.iter().zip(ols.iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn holiday_shift_in_horizon() {
        let day = start().date_naive() + Duration::days(30);
        let cal = CalendarSpec::default().with_holiday("x", [day]);
        let cfg = DecomposableConfig { n_changepoints: 2, ..bare() };
        let s = series((0..600).map(|i| 100 + i / 10).collect());
        let mut fit = fit_decomposable(&s, &cfg, &cal).unwrap();
        fit.holidays.kappa = vec![0.25];
        let with = forecast_decomposable(&fit, 200).unwrap();
        fit.holidays.kappa = vec![0.0];
        let without = forecast_decomposable(&fit, 200).unwrap();
        for (a, b) in with.points.iter().zip(&without.points) {
            let shift = if a.ts.date_naive() == day { 0.25 * fit.y_scale } else { 0.0 };
            assert!((a.mean - b.mean - shift).abs() < 1e-9);
        }
        assert!(with.points.iter().any(|p| p.ts.date_naive() == day));
    }

    #[test]
    fn logistic_trend_saturates() {
        let tr = TrendSpec {
            kind: TrendKind::Logistic,
            k: 1e6,
            m: 0.5,
            delta: vec![],
            gamma: vec![],
            changepoints: vec![],
            changepoints_t: vec![],
            capacity: Some(1.3),
        };
        assert_eq!(tr.value(0.9), 1.3);
        assert!(tr.value(0.1) < 1e-12);

        // Data saturating at the supplied capacity.
        let values: Vec<u32> = (0..800).map(|i| (100.0 / (1.0 + (-(i as f64 - 300.0) / 40.0).exp())).round() as u32).collect();
        let cfg = DecomposableConfig { trend: TrendKind::Logistic, capacity: Some(100.0), n_changepoints: 2, ..bare() };
        let fit = fit_decomposable(&series(values), &cfg, &CalendarSpec::default()).unwrap();
        let f = forecast_decomposable(&fit, 2000).unwrap();
        assert!(f.points.iter().all(|p| p.mean <= 100.0 + 1e-9));
        assert!((f.points.last().unwrap().mean - 100.0).abs() < 2.0);
        let mid = fit.trend_at(fit.origin - chrono::Duration::hours(499));
        assert!((mid - 50.0).abs() < 5.0, "{mid}");
    }

    #[test]
    fn rejects_bad_config_and_short_series() {
        let bad = DecomposableConfig { changepoint_range: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let short = series(vec![5; 100]);
        assert!(matches!(
            fit_decomposable(&short, &DecomposableConfig::default(), &CalendarSpec::default()),
            Err(Error::InsufficientData { required: 8766, .. })
        ));
        assert_eq!(DecomposableConfig::tuned().mode, SeasonalityMode::Multiplicative);
    }
}
