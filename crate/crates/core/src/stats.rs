//! Stationarity testing, correlograms and the invertible transforms used
//! ahead of ARIMA and LSTM fitting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Offset added before taking logs so zero stock stays finite.
pub const LOG_OFFSET: f64 = 1.0;

const P_VALUE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    /// t-ratio on the lagged level coefficient.
    pub statistic: f64,
    pub p_value: f64,
    pub lags_used: usize,
    pub n_obs: usize,
}

/// Schwert's rule of thumb, `floor(12 (n/100)^(1/4))`.
pub fn schwert_lag(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

struct OlsFit {
    coef: DVector<f64>,
    std_err: DVector<f64>,
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, k) = x.shape();
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale.max(1e-300)) {
        return Err(Error::Degenerate("regression design is rank deficient".into()));
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Degenerate("singular triangular factor".into()))?;
    let resid = y - x * &coef;
    let s2 = resid.norm_squared() / (n - k) as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Degenerate("singular triangular factor".into()))?;
    // (X'X)^-1 = R^-1 R^-T, so its diagonal is the squared row norms of R^-1.
    let std_err = DVector::from_iterator(k, (0..k).map(|i| (s2 * r_inv.row(i).norm_squared()).sqrt()));
    Ok(OlsFit { coef, std_err })
}

/// MacKinnon (1994) response-surface p-value for the constant-only,
/// single-series Dickey-Fuller distribution.
pub fn mackinnon_p_value(statistic: f64) -> f64 {
    const TAU_MAX: f64 = 2.74;
    const TAU_MIN: f64 = -18.83;
    const TAU_STAR: f64 = -1.61;
    const SMALL_P: [f64; 3] = [2.1659, 1.4412, 3.8269e-2];
    const LARGE_P: [f64; 4] = [1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2];

    if statistic.is_nan() {
        return 1.0;
    }
    if statistic > TAU_MAX {
        return 1.0;
    }
    if statistic < TAU_MIN {
        return P_VALUE_FLOOR;
    }
    let coeffs: &[f64] = if statistic <= TAU_STAR { &SMALL_P } else { &LARGE_P };
    let z = coeffs.iter().rev().fold(0.0, |acc, c| acc * statistic + c);
    let normal = Normal::standard();
    normal.cdf(z).clamp(P_VALUE_FLOOR, 1.0)
}

/// Augmented Dickey-Fuller test with a constant and `max_lag` lagged
/// differences (Schwert's rule when `None`).
pub fn adf_test(series: &[f64], max_lag: Option<usize>) -> Result<AdfResult> {
    let n = series.len();
    let lags = max_lag.unwrap_or_else(|| schwert_lag(n));
    if n < lags + 10 {
        return Err(Error::InsufficientData { required: lags + 10, actual: n });
    }
    if series.iter().all(|v| *v == series[0]) {
        return Err(Error::Degenerate("ADF on a constant series".into()));
    }
    let dy: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
    // Rows t = lags..dy.len(): dy[t] ~ 1 + y[t] + dy[t-1..t-lags]
    let rows = dy.len() - lags;
    let cols = 2 + lags;
    let x = DMatrix::from_fn(rows, cols, |r, c| {
        let t = r + lags;
        match c {
            0 => 1.0,
            1 => series[t],
            _ => dy[t - (c - 1)],
        }
    });
    let y = DVector::from_iterator(rows, (0..rows).map(|r| dy[r + lags]));
    let fit = ols(&x, &y)?;
    let statistic = fit.coef[1] / fit.std_err[1];
    if !statistic.is_finite() {
        return Err(Error::Degenerate("ADF regression has zero residual variance".into()));
    }
    Ok(AdfResult { statistic, p_value: mackinnon_p_value(statistic), lags_used: lags, n_obs: rows })
}

/// Sample autocorrelations `r[0..=n_lags]` (biased estimator, `r[0] = 1`).
pub fn acf(series: &[f64], n_lags: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n_lags >= n {
        return Err(Error::InsufficientData { required: n_lags + 1, actual: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0: f64 = centered.iter().map(|v| v * v).sum();
    if c0 <= 0.0 {
        return Err(Error::Degenerate("zero-variance series has no autocorrelation".into()));
    }
    let mut out = Vec::with_capacity(n_lags + 1);
    out.push(1.0);
    for k in 1..=n_lags {
        let ck: f64 = centered[k..].iter().zip(&centered).map(|(a, b)| a * b).sum();
        out.push(ck / c0);
    }
    Ok(out)
}

/// Durbin-Levinson recursion on autocorrelations `r[0..=order]`.
///
/// Returns the order-`order` AR coefficients and the partial
/// autocorrelations `pacf[0..=order]` (`pacf[0] = 1`).
pub fn durbin_levinson(r: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut phi: Vec<f64> = Vec::with_capacity(order);
    let mut pacf = vec![1.0];
    let mut v = r[0];
    for k in 1..=order {
        let num = r[k] - phi.iter().enumerate().map(|(j, p)| p * r[k - 1 - j]).sum::<f64>();
        let a = if v.abs() > 0.0 { num / v } else { 0.0 };
        let mut next: Vec<f64> = (0..k - 1).map(|j| phi[j] - a * phi[k - 2 - j]).collect();
        next.push(a);
        phi = next;
        v *= 1.0 - a * a;
        pacf.push(a);
    }
    (phi, pacf)
}

/// ACF and PACF for lags `0..=n_lags`.
pub fn correlogram(series: &[f64], n_lags: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let r = acf(series, n_lags)?;
    let (_, pacf) = durbin_levinson(&r, n_lags);
    Ok((r, pacf))
}

/// What [`log_difference`] did, enough to undo it on a forecast that
/// continues the transformed series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformState {
    pub applied_log: bool,
    pub diff_order: usize,
    /// `retained_values[k]` is the final value of the `k`-times differenced
    /// log series, for `k` in `0..diff_order`.
    pub retained_values: Vec<f64>,
    pub offset: f64,
}

pub fn difference(series: &[f64]) -> Vec<f64> {
    series.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `w = Δ^d log(y + 1)`.
pub fn log_difference(series: &[f64], d: usize) -> Result<(Vec<f64>, TransformState)> {
    if let Some(bad) = series.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("log transform of negative or non-finite value {bad}")));
    }
    if series.len() <= d {
        return Err(Error::InsufficientData { required: d + 1, actual: series.len() });
    }
    let mut w: Vec<f64> = series.iter().map(|v| (v + LOG_OFFSET).ln()).collect();
    let mut retained = Vec::with_capacity(d);
    for _ in 0..d {
        retained.push(*w.last().unwrap());
        w = difference(&w);
    }
    Ok((w, TransformState { applied_log: true, diff_order: d, retained_values: retained, offset: LOG_OFFSET }))
}

/// Undifferences a forecast of the transformed series and maps it back to
/// counts, clamping at zero.
pub fn invert_log_difference(w_forecast: &[f64], state: &TransformState) -> Result<Vec<f64>> {
    if state.retained_values.len() != state.diff_order {
        return Err(Error::Config(format!(
            "transform state holds {} retained values for differencing order {}",
            state.retained_values.len(),
            state.diff_order
        )));
    }
    let mut level = w_forecast.to_vec();
    for k in (0..state.diff_order).rev() {
        let mut acc = state.retained_values[k];
        for v in level.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    Ok(level
        .into_iter()
        .map(|v| if state.applied_log { v.exp() - state.offset } else { v })
        .map(|v| v.max(0.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub min: f64,
    pub max: f64,
}

impl ScalerState {
    pub fn fit(series: &[f64]) -> Result<Self> {
        let min = series.iter().copied().fold(f64::INFINITY, f64::min);
        let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max > min) {
            return Err(Error::Degenerate("min-max scaling needs at least two distinct values".into()));
        }
        Ok(Self { min, max })
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

pub fn minmax_scale(series: &[f64]) -> Result<(Vec<f64>, ScalerState)> {
    let state = ScalerState::fit(series)?;
    Ok((series.iter().map(|v| state.scale(*v)).collect(), state))
}

pub fn minmax_invert(scaled: &[f64], state: &ScalerState) -> Vec<f64> {
    scaled.iter().map(|v| state.invert(*v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as Gauss};

    fn fixture() -> Vec<f64> {
        (0..120)
            .map(|t| {
                let t = t as f64;
                10.0 * (0.37 * t).sin() + 0.01 * t + ((t as u64 * 7919) % 13) as f64
            })
            .collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Gauss::new(0.0, 1.0).unwrap();
        (0..n).map(|_| g.sample(&mut rng)).collect()
    }

    #[test]
    fn mackinnon_matches_reference() {
        // statsmodels.tsa.adfvalues.mackinnonp(stat, 'c', 1)
        let cases = [
            (-7.0, 7.363798725300586e-10),
            (-3.5, 0.007987094061496709),
            (-2.86, 0.05020109988200309),
            (-1.0, 0.7532643012005655),
            (0.5, 0.9848730963065522),
        ];
        for (stat, p) in cases {
            let got = mackinnon_p_value(stat);
            assert!((got - p).abs() <= 1e-9 * p.max(1e-3), "{stat}: {got} vs {p}");
        }
        assert_eq!(mackinnon_p_value(3.0), 1.0);
        assert_eq!(mackinnon_p_value(-40.0), 1e-10);
    }

    #[test]
    fn adf_matches_reference_regression() {
        // statsmodels adfuller(y, maxlag=3, autolag=None, regression='c')
        let r = adf_test(&fixture(), Some(3)).unwrap();
        assert!((r.statistic - -5.453503487855361).abs() < 1e-9, "{}", r.statistic);
        assert!((r.p_value - 2.61252911897189e-06).abs() < 1e-12);
        assert_eq!((r.lags_used, r.n_obs), (3, 116));
    }

    #[test]
    fn adf_is_shift_invariant() {
        let y = fixture();
        let shifted: Vec<f64> = y.iter().map(|v| v + 250.0).collect();
        let a = adf_test(&y, Some(4)).unwrap();
        let b = adf_test(&shifted, Some(4)).unwrap();
        assert!((a.statistic - b.statistic).abs() < 1e-8);
    }

    #[test]
    fn adf_errors() {
        assert!(matches!(adf_test(&[3.0; 50], Some(2)), Err(Error::Degenerate(_))));
        assert!(matches!(adf_test(&fixture()[..12], Some(5)), Err(Error::InsufficientData { .. })));
        assert_eq!(schwert_lag(500), 17);
    }

    #[test]
    fn correlogram_matches_reference() {
        // statsmodels acf(fft=False) and pacf(method='ldb')
        let (a, p) = correlogram(&fixture(), 4).unwrap();
        let acf_ref = [1.0, 0.7726635563815721, 0.5113303133796225, 0.24038558336379437, -0.014539597784436782];
        let pacf_ref = [1.0, 0.7726635563815721, -0.212606861918957, -0.19342516676862181, -0.17382804681880817];
        for k in 0..=4 {
            assert!((a[k] - acf_ref[k]).abs() < 1e-12);
            assert!((p[k] - pacf_ref[k]).abs() < 1e-12);
        }
        assert_eq!(a[0], 1.0);
        assert_eq!(p[1], a[1]);
    }

    #[test]
    fn white_noise_acf_is_small() {
        let (a, _) = correlogram(&noise(5000, 7), 20).unwrap();
        assert!(a[1..].iter().all(|r| r.abs() < 0.05), "{a:?}");
    }

    #[test]
    fn ar1_acf_decays_geometrically() {
        let e = noise(20_000, 11);
        let mut y = vec![0.0; e.len()];
        for t in 1..y.len() {
            y[t] = 0.7 * y[t - 1] + e[t];
        }
        let (a, _) = correlogram(&y, 5).unwrap();
        for k in 1..=5 {
            assert!((a[k] - 0.7f64.powi(k as i32)).abs() < 0.05, "lag {k}: {}", a[k]);
        }
    }

    #[test]
    fn correlogram_errors() {
        assert!(matches!(correlogram(&[1.0; 10], 3), Err(Error::Degenerate(_))));
        assert!(correlogram(&[1.0, 2.0, 3.0], 3).is_err());
    }

    #[test]
    fn log_difference_examples() {
        let (w, st) = log_difference(&[1.0, 1.0, 1.0], 1).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
        assert_eq!(st.retained_values, vec![2f64.ln()]);
        let (w0, st0) = log_difference(&[0.0, 3.0], 0).unwrap();
        assert_eq!(w0, vec![0.0, 4f64.ln()]);
        let back = invert_log_difference(&w0, &st0).unwrap();
        assert!((back[1] - 3.0).abs() < 1e-12);
        assert!(matches!(log_difference(&[1.0, -2.0], 1), Err(Error::Domain(_))));
    }

    #[test]
    fn inversion_of_flat_and_falling_increments() {
        let (_, st) = log_difference(&[4.0, 9.0], 1).unwrap();
        let out = invert_log_difference(&[0.0, 0.0, 0.0], &st).unwrap();
        assert!(out.iter().all(|v| (v - 9.0).abs() < 1e-12));
        let crash = invert_log_difference(&[-50.0, -50.0], &st).unwrap();
        assert!(crash.iter().all(|v| *v == 0.0));
        let bad = TransformState { diff_order: 2, ..st };
        assert!(invert_log_difference(&[0.0], &bad).is_err());
    }

    #[test]
    fn minmax_examples() {
        let (s, st) = minmax_scale(&[0.0, 5.0, 10.0]).unwrap();
        assert_eq!(s, vec![0.0, 0.5, 1.0]);
        assert!(matches!(minmax_scale(&[2.0, 2.0]), Err(Error::Degenerate(_))));
        // Test data beyond the training range falls outside [0, 1].
        assert!(st.scale(15.0) > 1.0 && st.scale(-1.0) < 0.0);
    }

    proptest! {
        #[test]
        fn tail_round_trip(values in prop::collection::vec(0.0f64..5000.0, 8..60), d in 0usize..3, k in 1usize..5) {
            prop_assume!(values.len() > k + d + 1);
            let (w, _) = log_difference(&values, d).unwrap();
            let split = values.len() - k;
            let (_, st) = log_difference(&values[..split], d).unwrap();
            let back = invert_log_difference(&w[w.len() - k..], &st).unwrap();
            for (a, b) in back.iter().zip(&values[split..]) {
                prop_assert!((a - b).abs() <= 1e-10 * b.max(1.0), "{} vs {}", a, b);
            }
        }

        #[test]
        fn minmax_inverts(values in prop::collection::vec(-1e4f64..1e4, 2..50)) {
            prop_assume!(values.iter().any(|v| *v != values[0]));
            let (s, st) = minmax_scale(&values).unwrap();
            for (a, b) in minmax_invert(&s, &st).iter().zip(&values) {
                prop_assert!((a - b).abs() <= 1e-12 * (st.max - st.min).max(1.0));
            }
        }

        #[test]
        fn acf_is_bounded(values in prop::collection::vec(-100.0f64..100.0, 10..80)) {
            prop_assume!(values.iter().any(|v| (*v - values[0]).abs() > 1e-6));
            let (a, p) = correlogram(&values, 5).unwrap();
            prop_assert!(a.iter().all(|r| r.abs() <= 1.0 + 1e-12));
            prop_assert_eq!(p[1], a[1]);
        }
    }
}
