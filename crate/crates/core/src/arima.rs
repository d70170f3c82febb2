//! ARIMA(p, d, q) on the log-differenced series, estimated by conditional
//! sum of squares.
//!
//! The transformed series `w = Δ^d log(y + 1)` follows
//!
//! ```text
//! w_t = θ0 + Σ_{i=1..p} β_i w_{t−i} + Σ_{j=1..q} θ_j ε_{t−j} + ε_t
//! ```
//!
//! with pre-sample `w` and `ε` taken as zero.

use chrono::{DateTime, Utc};
use log::warn;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ForecastResult, ModelParams, ModelSpec};
use crate::ingest::ContainerCategory;
use crate::optim::{minimize_bfgs, BfgsOptions};
use crate::series::StockSeries;
use crate::stats::{acf, durbin_levinson, invert_log_difference, log_difference, TransformState};

const MAX_ORDER: usize = 24;
const BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl ArimaOrder {
    pub const fn new(p: usize, d: usize, q: usize) -> Self {
        Self { p, d, q }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > MAX_ORDER || self.d > MAX_ORDER || self.q > MAX_ORDER {
            return Err(Error::Config(format!("ARIMA orders must not exceed {MAX_ORDER}: {self:?}")));
        }
        Ok(())
    }

    /// Shortest series `fit_arima` accepts.
    pub fn min_length(&self) -> usize {
        (10 * (self.p + self.q + self.d)).max(10)
    }
}

impl Default for ArimaOrder {
    fn default() -> Self {
        Self::new(2, 1, 5)
    }
}

/// Order plus whether the constant `θ0` is estimated (otherwise pinned at 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArimaConfig {
    pub order: ArimaOrder,
    #[serde(default = "default_true")]
    pub include_constant: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ArimaConfig {
    fn default() -> Self {
        Self { order: ArimaOrder::default(), include_constant: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaParams {
    pub beta: Vec<f64>,
    pub theta0: f64,
    pub theta: Vec<f64>,
}

impl ArimaParams {
    pub fn zeros(order: ArimaOrder) -> Self {
        Self { beta: vec![0.0; order.p], theta0: 0.0, theta: vec![0.0; order.q] }
    }

    fn pack(&self, include_constant: bool) -> Vec<f64> {
        let mut v = self.beta.clone();
        if include_constant {
            v.push(self.theta0);
        }
        v.extend_from_slice(&self.theta);
        v
    }

    fn unpack(x: &[f64], order: ArimaOrder, include_constant: bool) -> Self {
        let (beta, rest) = x.split_at(order.p);
        let (theta0, theta) = if include_constant { (rest[0], &rest[1..]) } else { (0.0, rest) };
        Self { beta: beta.to_vec(), theta0, theta: theta.to_vec() }
    }
}

/// One-step residuals of the recursion with zero pre-sample values, and
/// their sum of squares.
pub fn css_residuals(params: &ArimaParams, w: &[f64], order: ArimaOrder) -> (Vec<f64>, f64) {
    let mut eps = vec![0.0; w.len()];
    let mut css = 0.0;
    for t in 0..w.len() {
        let mut pred = params.theta0;
        for (i, b) in params.beta.iter().take(order.p).enumerate() {
            if t > i {
                pred += b * w[t - 1 - i];
            }
        }
        for (j, th) in params.theta.iter().take(order.q).enumerate() {
            if t > j {
                pred += th * eps[t - 1 - j];
            }
        }
        let e = w[t] - pred;
        eps[t] = e;
        css += e * e;
    }
    (eps, css)
}

fn css_only(params: &ArimaParams, w: &[f64], order: ArimaOrder) -> f64 {
    // Same recursion without keeping the whole residual vector.
    let q = order.q;
    let mut ring = vec![0.0; q.max(1)];
    let mut css = 0.0;
    for t in 0..w.len() {
        let mut pred = params.theta0;
        for (i, b) in params.beta.iter().enumerate() {
            if t > i {
                pred += b * w[t - 1 - i];
            }
        }
        for (j, th) in params.theta.iter().enumerate() {
            if t > j {
                pred += th * ring[(t - 1 - j) % q];
            }
        }
        let e = w[t] - pred;
        if q > 0 {
            ring[t % q] = e;
        }
        css += e * e;
        if !css.is_finite() {
            return f64::INFINITY;
        }
    }
    css
}

/// Result of minimising the conditional sum of squares on an already
/// transformed series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CssEstimate {
    pub params: ArimaParams,
    pub residuals: Vec<f64>,
    pub css: f64,
    pub sigma2: f64,
    /// CSS at the best of the starting points.
    pub initial_css: f64,
    pub nonstationary_ar: bool,
}

/// Yule-Walker AR(p) estimate, or zeros when the autocorrelations are
/// degenerate.
fn yule_walker(w: &[f64], p: usize) -> Vec<f64> {
    if p == 0 || w.len() <= p {
        return vec![0.0; p];
    }
    match acf(w, p) {
        Ok(r) => durbin_levinson(&r, p).0,
        Err(_) => vec![0.0; p],
    }
}

/// `true` when every root of `1 − β1 z − … − βp z^p` lies outside the unit
/// circle.
pub fn ar_is_stationary(beta: &[f64]) -> bool {
    let p = beta.len();
    if p == 0 {
        return true;
    }
    let companion = DMatrix::from_fn(p, p, |i, j| if i == 0 { beta[j] } else if i == j + 1 { 1.0 } else { 0.0 });
    companion.complex_eigenvalues().iter().all(|z| z.norm() < 1.0)
}

/// Minimises the CSS of `w` over (β, θ0, θ) from two starts: all zeros and
/// the Yule-Walker AR estimate with zero MA terms. Both starts use the mean
/// of `w` to initialise `θ0`.
pub fn estimate_css(w: &[f64], order: ArimaOrder, include_constant: bool) -> Result<CssEstimate> {
    order.validate()?;
    if w.is_empty() {
        return Err(Error::InsufficientData { required: 1, actual: 0 });
    }
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let constant = |beta: &[f64]| if include_constant { mean * (1.0 - beta.iter().sum::<f64>()) } else { 0.0 };

    let zero = ArimaParams { theta0: constant(&[]), ..ArimaParams::zeros(order) };
    let yw_beta = yule_walker(w, order.p);
    let yw = ArimaParams { theta0: constant(&yw_beta), beta: yw_beta, theta: vec![0.0; order.q] };

    let objective = |x: &[f64]| css_only(&ArimaParams::unpack(x, order, include_constant), w, order);
    let opts = BfgsOptions::default();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut initial_css = f64::INFINITY;
    let mut last_err = None;
    for start in [zero, yw] {
        let x0 = start.pack(include_constant);
        initial_css = initial_css.min(objective(&x0));
        match minimize_bfgs(objective, &x0, &opts) {
            Ok(m) => {
                if best.as_ref().is_none_or(|(_, f)| m.f < *f) {
                    best = Some((m.x, m.f));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (x, _) = best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::FitFailure("no starting point produced a finite CSS".into()))
    })?;
    let params = ArimaParams::unpack(&x, order, include_constant);
    let (residuals, css) = css_residuals(&params, w, order);
    if !css.is_finite() {
        return Err(Error::FitFailure(format!("non-finite CSS at the optimum: {params:?}")));
    }
    let nonstationary_ar = !ar_is_stationary(&params.beta);
    if nonstationary_ar {
        warn!("fitted AR polynomial has roots on or inside the unit circle: {:?}", params.beta);
    }
    Ok(CssEstimate { sigma2: css / w.len() as f64, params, residuals, css, initial_css, nonstationary_ar })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaFit {
    pub config: ArimaConfig,
    pub params: ArimaParams,
    pub transform: TransformState,
    pub residuals: Vec<f64>,
    /// Last `p` transformed observations, oldest first.
    pub tail_w: Vec<f64>,
    /// Last `q` residuals, oldest first.
    pub tail_residuals: Vec<f64>,
    pub css: f64,
    pub sigma2: f64,
    pub nonstationary_ar: bool,
    pub origin: DateTime<Utc>,
    pub category: ContainerCategory,
}

impl ArimaFit {
    pub fn order(&self) -> ArimaOrder {
        self.config.order
    }

    /// Iterates the recursion forward on the transformed scale with future
    /// shocks set to zero.
    pub fn forecast_transformed(&self, horizon: usize) -> Vec<f64> {
        let ArimaOrder { p, q, .. } = self.order();
        let mut w = self.tail_w.clone();
        let mut eps = self.tail_residuals.clone();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let mut next = self.params.theta0;
            for i in 0..p {
                next += self.params.beta[i] * w[w.len() - 1 - i];
            }
            for j in 0..q {
                next += self.params.theta[j] * eps[eps.len() - 1 - j];
            }
            w.push(next);
            eps.push(0.0);
            out.push(next);
        }
        out
    }
}

fn tail(v: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k.saturating_sub(v.len())];
    out.extend_from_slice(&v[v.len().saturating_sub(k)..]);
    out
}

pub fn fit_arima(series: &StockSeries, config: ArimaConfig) -> Result<ArimaFit> {
    let order = config.order;
    order.validate()?;
    if series.len() < order.min_length() {
        return Err(Error::InsufficientData { required: order.min_length(), actual: series.len() });
    }
    let (w, transform) = log_difference(&series.to_f64(), order.d)?;
    let est = estimate_css(&w, order, config.include_constant)?;
    Ok(ArimaFit {
        config,
        tail_w: tail(&w, order.p),
        tail_residuals: tail(&est.residuals, order.q),
        params: est.params,
        transform,
        residuals: est.residuals,
        css: est.css,
        sigma2: est.sigma2,
        nonstationary_ar: est.nonstationary_ar,
        origin: series.index().last(),
        category: series.category(),
    })
}

pub fn forecast_arima(fit: &ArimaFit, horizon_hours: usize) -> Result<ForecastResult> {
    if horizon_hours == 0 {
        return Err(Error::Config("forecast horizon must be at least one hour".into()));
    }
    let w = fit.forecast_transformed(horizon_hours);
    let values = invert_log_difference(&w, &fit.transform)?;
    ForecastResult::new(
        fit.origin,
        values,
        ModelSpec { params: ModelParams::Arima(fit.config), seed: 0 },
        fit.category,
    )
}

/// Simulates the ARIMA recursion with N(0, σ²) shocks after a burn-in,
/// integrating `d` times from zero.
pub fn simulate_arima(params: &ArimaParams, order: ArimaOrder, n: usize, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if n == 0 || !(sigma > 0.0) {
        return Err(Error::Config("simulation needs n >= 1 and sigma > 0".into()));
    }
    if !ar_is_stationary(&params.beta[..order.p.min(params.beta.len())]) {
        warn!("simulating an explosive AR polynomial {:?}", params.beta);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shock = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let total = n + BURN_IN;
    let mut w = vec![0.0; total];
    let mut eps = vec![0.0; total];
    for t in 0..total {
        let e = shock.sample(&mut rng);
        let mut v = params.theta0 + e;
        for i in 0..order.p.min(t) {
            v += params.beta[i] * w[t - 1 - i];
        }
        for j in 0..order.q.min(t) {
            v += params.theta[j] * eps[t - 1 - j];
        }
        w[t] = v;
        eps[t] = e;
    }
    let mut out = w.split_off(BURN_IN);
    for _ in 0..order.d {
        let mut acc = 0.0;
        for v in out.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::naive_forecast;
    use crate::series::TimeIndex;
    use chrono::TimeZone;
    use proptest::prelude::*;
    use rand::Rng;

    fn series(values: Vec<u32>) -> StockSeries {
        let start = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
        StockSeries::new(TimeIndex::new(start, values.len()).unwrap(), values, ContainerCategory::Standard).unwrap()
    }

    fn random_series(n: usize, seed: u64) -> StockSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut level = 300i64;
        series(
            (0..n)
                .map(|_| {
                    level = (level + rng.random_range(-9..=9)).max(0);
                    level as u32
                })
                .collect(),
        )
    }

    #[test]
    fn css_degenerate_orders() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let order = ArimaOrder::new(0, 0, 0);
        let (e, css) = css_residuals(&ArimaParams::zeros(order), &w, order);
        assert_eq!(e, w.to_vec());
        assert_eq!(css, w.iter().map(|v| v * v).sum::<f64>());

        let mean = w.iter().sum::<f64>() / 4.0;
        let centered = ArimaParams { theta0: mean, ..ArimaParams::zeros(order) };
        let (_, css) = css_residuals(&centered, &w, order);
        let expected: f64 = w.iter().map(|v| (v - mean).powi(2)).sum();
        assert!((css - expected).abs() < 1e-14);
    }

    #[test]
    fn css_hand_recursion() {
        let order = ArimaOrder::new(1, 0, 0);
        let p = ArimaParams { beta: vec![1.0], theta0: 0.0, theta: vec![] };
        let (e, css) = css_residuals(&p, &[1.0, 1.0, 1.0], order);
        assert_eq!(e, vec![1.0, 0.0, 0.0]);
        assert_eq!(css, 1.0);

        // MA(1), θ1 = 0.5: ε0 = 1, ε1 = 2 − 0.5 = 1.5, ε2 = 0 − 0.75
        let order = ArimaOrder::new(0, 0, 1);
        let p = ArimaParams { beta: vec![], theta0: 0.0, theta: vec![0.5] };
        let (e, _) = css_residuals(&p, &[1.0, 2.0, 0.0], order);
        assert_eq!(e, vec![1.0, 1.5, -0.75]);
        assert_eq!(css_only(&p, &[1.0, 2.0, 0.0], order), 1.0 + 2.25 + 0.5625);
    }

    #[test]
    fn recovers_ar2() {
        let order = ArimaOrder::new(2, 0, 0);
        let truth = ArimaParams { beta: vec![0.5, -0.3], theta0: 0.0, theta: vec![] };
        let w = simulate_arima(&truth, order, 2000, 1.0, 42).unwrap();
        let est = estimate_css(&w, order, true).unwrap();
        assert!((est.params.beta[0] - 0.5).abs() < 0.08, "{:?}", est.params);
        assert!((est.params.beta[1] + 0.3).abs() < 0.08, "{:?}", est.params);
        assert!(est.css <= est.initial_css);
        assert!(!est.nonstationary_ar);
    }

    #[test]
    fn white_noise_ma1_is_near_zero() {
        let order = ArimaOrder::new(0, 0, 0);
        let w = simulate_arima(&ArimaParams::zeros(order), order, 2000, 1.0, 9).unwrap();
        let est = estimate_css(&w, ArimaOrder::new(0, 0, 1), true).unwrap();
        assert!(est.params.theta[0].abs() < 0.08, "{:?}", est.params);
    }

    #[test]
    fn random_walk_order_gives_mean_drift_and_naive_forecast() {
        let s = random_series(400, 3);
        let fit = fit_arima(&s, ArimaConfig { order: ArimaOrder::new(0, 1, 0), include_constant: true }).unwrap();
        let (w, _) = log_difference(&s.to_f64(), 1).unwrap();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!((fit.params.theta0 - mean).abs() < 1e-9);

        let flat = fit_arima(&s, ArimaConfig { order: ArimaOrder::new(0, 1, 0), include_constant: false }).unwrap();
        let a = forecast_arima(&flat, 48).unwrap();
        let b = naive_forecast(&s, 48).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert!((x.mean - y.mean).abs() < 1e-9);
        }
    }

    #[test]
    fn ar1_forecasts_match_closed_form() {
        let fit = ArimaFit {
            config: ArimaConfig { order: ArimaOrder::new(1, 0, 0), include_constant: true },
            params: ArimaParams { beta: vec![0.8], theta0: 0.3, theta: vec![] },
            transform: TransformState { applied_log: true, diff_order: 0, retained_values: vec![], offset: 1.0 },
            residuals: vec![],
            tail_w: vec![2.5],
            tail_residuals: vec![],
            css: 0.0,
            sigma2: 0.0,
            nonstationary_ar: false,
            origin: Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
            category: ContainerCategory::Standard,
        };
        let w = fit.forecast_transformed(30);
        assert_eq!(w[0], 0.3 + 0.8 * 2.5);
        for (h, v) in w.iter().enumerate() {
            let h = (h + 1) as i32;
            let closed = 0.3 * (1.0 - 0.8f64.powi(h)) / (1.0 - 0.8) + 0.8f64.powi(h) * 2.5;
            assert!((v - closed).abs() < 1e-8);
        }
    }

    /// Re-runs the defining recursion on an extended series with zero
    /// future shocks.
    fn brute_force_forecast(params: &ArimaParams, w: &[f64], resid: &[f64], horizon: usize) -> Vec<f64> {
        let mut ws = w.to_vec();
        let mut es = resid.to_vec();
        for _ in 0..horizon {
            let t = ws.len();
            let ar: f64 = params.beta.iter().enumerate().map(|(i, b)| b * ws[t - 1 - i]).sum();
            let ma: f64 = params.theta.iter().enumerate().map(|(j, th)| th * es[t - 1 - j]).sum();
            ws.push(params.theta0 + ar + ma);
            es.push(0.0);
        }
        ws[w.len()..].to_vec()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn forecast_matches_brute_force(p in 0usize..=3, q in 0usize..=3, horizon in 1usize..=24, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let order = ArimaOrder::new(p, 1, q);
            let params = ArimaParams {
                beta: (0..p).map(|_| rng.random_range(-0.3..0.3)).collect(),
                theta0: rng.random_range(-0.01..0.01),
                theta: (0..q).map(|_| rng.random_range(-0.3..0.3)).collect(),
            };
            let s = random_series(120, seed);
            let (w, transform) = log_difference(&s.to_f64(), 1).unwrap();
            let (resid, css) = css_residuals(&params, &w, order);
            let fit = ArimaFit {
                config: ArimaConfig { order, include_constant: true },
                tail_w: tail(&w, p),
                tail_residuals: tail(&resid, q),
                params: params.clone(),
                transform,
                residuals: resid.clone(),
                css,
                sigma2: css / w.len() as f64,
                nonstationary_ar: false,
                origin: s.index().last(),
                category: s.category(),
            };
            let got = fit.forecast_transformed(horizon);
            let want = brute_force_forecast(&params, &w, &resid, horizon);
            for (a, b) in got.iter().zip(&want) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fit_never_worse_than_start() {
        let s = random_series(600, 5);
        let (w, _) = log_difference(&s.to_f64(), 1).unwrap();
        let est = estimate_css(&w, ArimaOrder::new(2, 1, 2), true).unwrap();
        assert!(est.css <= est.initial_css);
    }

    #[test]
    fn simulation_properties() {
        let order = ArimaOrder::new(0, 0, 0);
        let noise = simulate_arima(&ArimaParams::zeros(order), order, 4000, 2.0, 1).unwrap();
        let mean = noise.iter().sum::<f64>() / 4000.0;
        assert!(mean.abs() < 4.0 * 2.0 / 4000f64.sqrt());
        assert_eq!(noise, simulate_arima(&ArimaParams::zeros(order), order, 4000, 2.0, 1).unwrap());

        let ar = ArimaOrder::new(1, 0, 0);
        let y = simulate_arima(&ArimaParams { beta: vec![0.7], theta0: 0.0, theta: vec![] }, ar, 5000, 1.0, 2).unwrap();
        let r = acf(&y, 1).unwrap();
        assert!((r[1] - 0.7).abs() < 0.05, "{}", r[1]);
        assert!(simulate_arima(&ArimaParams::zeros(order), order, 0, 1.0, 1).is_err());
    }

    #[test]
    fn stationarity_check() {
        assert!(ar_is_stationary(&[0.5, -0.3]));
        assert!(!ar_is_stationary(&[1.1]));
        assert!(!ar_is_stationary(&[0.5, 0.6]));
    }

    #[test]
    fn rejects_short_series_and_zero_horizon() {
        let s = random_series(50, 1);
        assert!(matches!(fit_arima(&s, ArimaConfig::default()), Err(Error::InsufficientData { required: 80, .. })));
        let fit = fit_arima(&s, ArimaConfig { order: ArimaOrder::new(1, 1, 0), include_constant: true }).unwrap();
        assert!(forecast_arima(&fit, 0).is_err());
        assert_eq!(forecast_arima(&fit, 5).unwrap().points.len(), 5);
    }
}
