//! Stacked LSTM regressor trained by backpropagation through time.
//!
//! Each cell computes
//!
//! ```text
//! f = σ(X·U_f + S·W_f + b_f)      i = σ(X·U_i + S·W_i + b_i)
//! C̃ = tanh(X·U_c + S·W_c + b_c)   o = σ(X·U_o + S·W_o + b_o)
//! C' = C ⊗ f ⊕ i ⊗ C̃              S' = o ⊗ tanh(C')
//! ```
//!
//! A linear head maps the top layer's final hidden state to a one-step
//! prediction on the min-max scale. Loss is `1/(2B) Σ (pred − target)²`.

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ForecastResult, ModelParams, ModelSpec};
use crate::ingest::ContainerCategory;
use crate::par::Execution;
use crate::series::StockSeries;
use crate::stats::ScalerState;

/// Gate order inside every per-gate array.
pub const FORGET: usize = 0;
pub const INPUT: usize = 1;
pub const OUTPUT: usize = 2;
pub const CANDIDATE: usize = 3;

/// Samples per gradient work unit. Fixed so the summation order, and hence
/// the result, does not depend on the thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub timesteps: usize,
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Train on at most this many of the most recent windows.
    #[serde(default)]
    pub max_train_windows: Option<usize>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            timesteps: 150,
            layers: 5,
            hidden: 32,
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 32,
            seed: 0,
            max_train_windows: None,
        }
    }
}

impl NetworkConfig {
    /// Small configuration that trains in seconds per fold on one core.
    pub fn reduced() -> Self {
        Self { timesteps: 24, layers: 2, hidden: 16, epochs: 50, max_train_windows: Some(1000), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.layers == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("LSTM sizes must be positive: {self:?}")));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_train_windows == Some(0) {
            return Err(Error::Config("max_train_windows must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden: usize,
    /// `input_dim × hidden`, row-major, per gate.
    pub u: [Vec<f64>; 4],
    /// `hidden × hidden`, row-major, per gate.
    pub w: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let m = |rows: usize| std::array::from_fn(|_| vec![0.0; rows * hidden]);
        Self { input_dim, hidden, u: m(input_dim), w: m(hidden), b: m(1) }
    }

    fn check(&self) -> Result<()> {
        let h = self.hidden;
        for g in 0..4 {
            if self.u[g].len() != self.input_dim * h || self.w[g].len() != h * h || self.b[g].len() != h {
                return Err(Error::Shape(format!("gate {g} parameters do not match {}x{h}", self.input_dim)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub s: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { s: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Activations of one cell step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    pub x: Vec<f64>,
    pub s_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub c_tilde: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn pre_activation(x: &[f64], s: &[f64], p: &LstmLayerParams, g: usize) -> Vec<f64> {
    let h = p.hidden;
    let mut out = p.b[g].clone();
    for (k, xk) in x.iter().enumerate() {
        for (o, u) in out.iter_mut().zip(&p.u[g][k * h..(k + 1) * h]) {
            *o += xk * u;
        }
    }
    for (k, sk) in s.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(&p.w[g][k * h..(k + 1) * h]) {
            *o += sk * w;
        }
    }
    out
}

pub fn cell_forward(x: &[f64], prev: &LstmState, params: &LstmLayerParams) -> Result<(LstmState, CellCache)> {
    params.check()?;
    if x.len() != params.input_dim || prev.s.len() != params.hidden || prev.c.len() != params.hidden {
        return Err(Error::Shape(format!(
            "cell expects input {} and state {}, got {} and {}/{}",
            params.input_dim,
            params.hidden,
            x.len(),
            prev.s.len(),
            prev.c.len()
        )));
    }
    let gate = |g: usize, act: fn(f64) -> f64| -> Vec<f64> {
        pre_activation(x, &prev.s, params, g).into_iter().map(act).collect()
    };
    let f = gate(FORGET, sigmoid);
    let i = gate(INPUT, sigmoid);
    let c_tilde = gate(CANDIDATE, f64::tanh);
    let o = gate(OUTPUT, sigmoid);
    let c: Vec<f64> = (0..params.hidden).map(|j| prev.c[j] * f[j] + i[j] * c_tilde[j]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let s: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    let cache = CellCache {
        x: x.to_vec(),
        s_prev: prev.s.clone(),
        c_prev: prev.c.clone(),
        f,
        i,
        o,
        c_tilde,
        c: c.clone(),
        tanh_c,
    };
    Ok((LstmState { s, c }, cache))
}

/// Accumulates parameter gradients of one cell step into `grad` and returns
/// the gradients for the input, the previous hidden state and the previous
/// cell state.
fn cell_backward(
    cache: &CellCache,
    ds: &[f64],
    dc_next: &[f64],
    params: &LstmLayerParams,
    grad: &mut LstmLayerParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = params.hidden;
    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; h]);
    let mut dc_prev = vec![0.0; h];
    for j in 0..h {
        let dc = dc_next[j] + ds[j] * cache.o[j] * (1.0 - cache.tanh_c[j] * cache.tanh_c[j]);
        let d_o = ds[j] * cache.tanh_c[j];
        let d_f = dc * cache.c_prev[j];
        let d_i = dc * cache.c_tilde[j];
        let d_ct = dc * cache.i[j];
        dc_prev[j] = dc * cache.f[j];
        dz[FORGET][j] = d_f * cache.f[j] * (1.0 - cache.f[j]);
        dz[INPUT][j] = d_i * cache.i[j] * (1.0 - cache.i[j]);
        dz[OUTPUT][j] = d_o * cache.o[j] * (1.0 - cache.o[j]);
        dz[CANDIDATE][j] = d_ct * (1.0 - cache.c_tilde[j] * cache.c_tilde[j]);
    }
    let mut dx = vec![0.0; params.input_dim];
    let mut ds_prev = vec![0.0; h];
    for g in 0..4 {
        let z = &dz[g];
        for (k, xk) in cache.x.iter().enumerate() {
            let row = k * h..(k + 1) * h;
            let mut acc = 0.0;
            for ((gu, u), zj) in grad.u[g][row.clone()].iter_mut().zip(&params.u[g][row]).zip(z) {
                *gu += xk * zj;
                acc += u * zj;
            }
            dx[k] += acc;
        }
        for (k, sk) in cache.s_prev.iter().enumerate() {
            let row = k * h..(k + 1) * h;
            let mut acc = 0.0;
            for ((gw, w), zj) in grad.w[g][row.clone()].iter_mut().zip(&params.w[g][row]).zip(z) {
                *gw += sk * zj;
                acc += w * zj;
            }
            ds_prev[k] += acc;
        }
        for (gb, zj) in grad.b[g].iter_mut().zip(z) {
            *gb += zj;
        }
    }
    (dx, ds_prev, dc_prev)
}

/// Layer stack plus linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub timesteps: usize,
    pub layers: Vec<LstmLayerParams>,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl Network {
    pub fn zeros(timesteps: usize, layers: usize, hidden: usize) -> Self {
        Self {
            timesteps,
            layers: (0..layers).map(|l| LstmLayerParams::zeros(if l == 0 { 1 } else { hidden }, hidden)).collect(),
            head_w: vec![0.0; hidden],
            head_b: 0.0,
        }
    }

    /// Training initialisation: weights uniform in ±1/√hidden, forget bias 1,
    /// other biases and the head at zero.
    pub fn init(config: &NetworkConfig, rng: &mut impl Rng) -> Self {
        let mut net = Self::zeros(config.timesteps, config.layers, config.hidden);
        let bound = 1.0 / (config.hidden as f64).sqrt();
        for layer in &mut net.layers {
            for g in 0..4 {
                layer.u[g].iter_mut().chain(layer.w[g].iter_mut()).for_each(|v| *v = rng.random_range(-bound..bound));
            }
            layer.b[FORGET].fill(1.0);
        }
        net
    }

    /// Every parameter, head included, uniform in ±`bound`.
    pub fn random(timesteps: usize, layers: usize, hidden: usize, bound: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(timesteps, layers, hidden);
        for slice in net.slices_mut() {
            slice.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        net
    }

    pub fn hidden(&self) -> usize {
        self.head_w.len()
    }

    /// Parameter blocks in a fixed order: per layer U, W, b by gate, then
    /// the head weight and bias.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.extend(l.u.iter().map(|v| v.as_slice()));
            out.extend(l.w.iter().map(|v| v.as_slice()));
            out.extend(l.b.iter().map(|v| v.as_slice()));
        }
        out.push(&self.head_w);
        out.push(std::slice::from_ref(&self.head_b));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.extend(l.u.iter_mut().map(|v| v.as_mut_slice()));
            out.extend(l.w.iter_mut().map(|v| v.as_mut_slice()));
            out.extend(l.b.iter_mut().map(|v| v.as_mut_slice()));
        }
        out.push(&mut self.head_w);
        out.push(std::slice::from_mut(&mut self.head_b));
        out
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.slices_mut().into_iter().for_each(|s| s.fill(0.0));
        z
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

pub type ForwardCache = Vec<Vec<CellCache>>;

/// Runs the stack over one window of scaled inputs.
pub fn forward(net: &Network, sequence: &[f64]) -> Result<(f64, ForwardCache)> {
    if sequence.len() != net.timesteps {
        return Err(Error::Shape(format!("expected {} timesteps, got {}", net.timesteps, sequence.len())));
    }
    let mut inputs: Vec<Vec<f64>> = sequence.iter().map(|v| vec![*v]).collect();
    let mut caches = Vec::with_capacity(net.layers.len());
    for (l, layer) in net.layers.iter().enumerate() {
        let mut state = LstmState::zeros(layer.hidden);
        let mut layer_cache = Vec::with_capacity(inputs.len());
        let mut outputs = Vec::with_capacity(inputs.len());
        for (t, x) in inputs.iter().enumerate() {
            let (next, cache) = cell_forward(x, &state, layer)?;
            if next.c.iter().chain(&next.s).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { layer: l, timestep: t });
            }
            outputs.push(next.s.clone());
            layer_cache.push(cache);
            state = next;
        }
        caches.push(layer_cache);
        inputs = outputs;
    }
    let top = inputs.last().map(|s| s.as_slice()).unwrap_or(&[]);
    let pred = net.head_b + top.iter().zip(&net.head_w).map(|(s, w)| s * w).sum::<f64>();
    Ok((pred, caches))
}

/// Adds the gradient of `dpred · pred` with respect to every parameter.
fn backward(net: &Network, caches: &ForwardCache, dpred: f64, grad: &mut Network) {
    let h = net.hidden();
    let t_len = net.timesteps;
    let top = &caches[caches.len() - 1][t_len - 1];
    for j in 0..h {
        grad.head_w[j] += dpred * top.o[j] * top.tanh_c[j];
    }
    grad.head_b += dpred;

    let mut d_inputs: Vec<Vec<f64>> = vec![vec![0.0; h]; t_len];
    d_inputs[t_len - 1] = net.head_w.iter().map(|w| w * dpred).collect();
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let mut ds_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dx_seq = Vec::with_capacity(t_len);
        for t in (0..t_len).rev() {
            let ds: Vec<f64> = d_inputs[t].iter().zip(&ds_next).map(|(a, b)| a + b).collect();
            let (dx, ds_prev, dc_prev) = cell_backward(&caches[l][t], &ds, &dc_next, layer, &mut grad.layers[l]);
            dx_seq.push(dx);
            ds_next = ds_prev;
            dc_next = dc_prev;
        }
        dx_seq.reverse();
        d_inputs = dx_seq;
    }
}

/// Loss `1/(2B) Σ (pred − target)²` over a batch.
pub fn batch_loss(net: &Network, batch: &[(Vec<f64>, f64)]) -> Result<f64> {
    let mut sse = 0.0;
    for (x, y) in batch {
        sse += (forward(net, x)?.0 - y).powi(2);
    }
    Ok(sse / (2.0 * batch.len() as f64))
}

/// Exact gradients of the batch loss and the loss itself.
pub fn bptt_gradients(net: &Network, batch: &[(Vec<f64>, f64)]) -> Result<(Network, f64)> {
    bptt_gradients_with(net, batch, Execution::Sequential)
}

pub fn bptt_gradients_with(net: &Network, batch: &[(Vec<f64>, f64)], exec: Execution) -> Result<(Network, f64)> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let chunks: Vec<&[(Vec<f64>, f64)]> = batch.chunks(CHUNK).collect();
    let partial = exec.map(&chunks, |chunk| -> Result<(Network, f64)> {
        let mut grad = net.zeros_like();
        let mut sse = 0.0;
        for (x, y) in chunk.iter() {
            let (pred, caches) = forward(net, x)?;
            let err = pred - y;
            sse += err * err;
            backward(net, &caches, err * scale, &mut grad);
        }
        Ok((grad, sse))
    });
    let mut total = net.zeros_like();
    let mut sse = 0.0;
    for part in partial {
        let (g, s) = part?;
        total.add_assign(&g);
        sse += s;
    }
    Ok((total, 0.5 * sse * scale))
}

/// Relative error `|a − n| / max(|a|, |n|, 1e-8)` of every parameter's
/// analytic gradient against a central difference with step 1e-5.
pub fn gradient_errors(net: &Network, batch: &[(Vec<f64>, f64)]) -> Result<Vec<f64>> {
    let (analytic, _) = bptt_gradients(net, batch)?;
    let analytic = analytic.flat();
    let eps = 1e-5;
    let mut probe = net.clone();
    let mut errors = Vec::with_capacity(analytic.len());
    let n_blocks = net.slices().len();
    let mut flat = 0;
    for block in 0..n_blocks {
        let len = net.slices()[block].len();
        for k in 0..len {
            let orig = net.slices()[block][k];
            probe.slices_mut()[block][k] = orig + eps;
            let up = batch_loss(&probe, batch)?;
            probe.slices_mut()[block][k] = orig - eps;
            let down = batch_loss(&probe, batch)?;
            probe.slices_mut()[block][k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[flat];
            errors.push((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
            flat += 1;
        }
    }
    Ok(errors)
}

fn random_batch(timesteps: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<f64>, f64)> {
    (0..size)
        .map(|_| ((0..timesteps).map(|_| rng.random_range(0.0..1.0)).collect(), rng.random_range(0.0..1.0)))
        .collect()
}

/// Largest relative gradient error on a seeded random network and batch of
/// the given shape.
pub fn gradient_check(config: &NetworkConfig, seed: u64) -> Result<f64> {
    config.validate()?;
    let net = Network::random(config.timesteps, config.layers, config.hidden, 0.5, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let batch = random_batch(config.timesteps, config.batch_size.min(4), &mut rng);
    Ok(gradient_errors(&net, &batch)?.into_iter().fold(0.0, f64::max))
}

struct Adam {
    m: Network,
    v: Network,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &Network, lr: f64) -> Self {
        Self { m: net.zeros_like(), v: net.zeros_like(), t: 0, lr }
    }

    fn step(&mut self, net: &mut Network, grad: &Network) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let blocks = net.slices_mut().into_iter().zip(grad.slices()).zip(self.m.slices_mut()).zip(self.v.slices_mut());
        for (((p, g), m), v) in blocks {
            for k in 0..p.len() {
                m[k] = Self::B1 * m[k] + (1.0 - Self::B1) * g[k];
                v[k] = Self::B2 * v[k] + (1.0 - Self::B2) * g[k] * g[k];
                p[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmFit {
    pub config: NetworkConfig,
    pub network: Network,
    pub scaler: ScalerState,
    /// Mean squared error over all training windows after the last epoch,
    /// on the scaled values.
    pub final_train_loss: f64,
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
    /// Last `timesteps` scaled observations.
    pub tail: Vec<f64>,
    pub origin: DateTime<Utc>,
    pub category: ContainerCategory,
}

fn windows(scaled: &[f64], t: usize, max: Option<usize>) -> Vec<(Vec<f64>, f64)> {
    let all = scaled.len().saturating_sub(t);
    let skip = max.map_or(0, |m| all.saturating_sub(m));
    (skip..all).map(|i| (scaled[i..i + t].to_vec(), scaled[i + t])).collect()
}

pub fn train(series: &StockSeries, config: &NetworkConfig) -> Result<LstmFit> {
    train_with(series, config, Execution::default())
}

pub fn train_with(series: &StockSeries, config: &NetworkConfig, exec: Execution) -> Result<LstmFit> {
    config.validate()?;
    let t = config.timesteps;
    if series.len() < 2 * t {
        return Err(Error::InsufficientData { required: 2 * t, actual: series.len() });
    }
    let raw = series.to_f64();
    let scaler = ScalerState::fit(&raw)?;
    let scaled: Vec<f64> = raw.iter().map(|v| scaler.scale(*v)).collect();
    let data = windows(&scaled, t, config.max_train_windows);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Network::init(config, &mut rng);
    let mut adam = Adam::new(&net, config.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(Vec<f64>, f64)> = idx.iter().map(|&i| data[i].clone()).collect();
            let (grad, loss) = bptt_gradients_with(&net, &batch, exec)
                .map_err(|e| Error::FitFailure(format!("epoch {epoch}, batch {b}: {e}")))?;
            if !loss.is_finite() {
                return Err(Error::FitFailure(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            adam.step(&mut net, &grad);
            epoch_loss += loss;
            batches += 1;
        }
        loss_history.push(epoch_loss / batches.max(1) as f64);
    }

    let sq = exec.map(&data, |(x, y)| forward(&net, x).map(|(p, _)| (p - y).powi(2)));
    let mut sse = 0.0;
    for v in sq {
        sse += v?;
    }
    Ok(LstmFit {
        config: config.clone(),
        network: net,
        scaler,
        final_train_loss: sse / data.len().max(1) as f64,
        loss_history,
        tail: scaled[scaled.len() - t..].to_vec(),
        origin: series.index().last(),
        category: series.category(),
    })
}

fn recursive_forecast(net: &Network, window: &[f64], horizon: usize) -> Result<Vec<f64>> {
    let mut window = window.to_vec();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (pred, _) = forward(net, &window)?;
        window.remove(0);
        window.push(pred);
        out.push(pred);
    }
    Ok(out)
}

fn to_result(fit: &LstmFit, origin: DateTime<Utc>, scaled: Vec<f64>) -> Result<ForecastResult> {
    let values = scaled.into_iter().map(|v| fit.scaler.invert(v)).collect();
    let spec = ModelSpec { params: ModelParams::Lstm(fit.config.clone()), seed: fit.config.seed };
    ForecastResult::new(origin, values, spec, fit.category)
}

/// Recursive forecast from the end of the training series.
pub fn forecast_lstm(fit: &LstmFit, horizon_hours: usize) -> Result<ForecastResult> {
    if horizon_hours == 0 {
        return Err(Error::Config("forecast horizon must be at least one hour".into()));
    }
    to_result(fit, fit.origin, recursive_forecast(&fit.network, &fit.tail, horizon_hours)?)
}

/// Recursive forecast seeded with the last `timesteps` values of `series`.
pub fn forecast_lstm_from(fit: &LstmFit, series: &StockSeries, horizon_hours: usize) -> Result<ForecastResult> {
    if horizon_hours == 0 {
        return Err(Error::Config("forecast horizon must be at least one hour".into()));
    }
    let t = fit.config.timesteps;
    if series.len() < t {
        return Err(Error::InsufficientData { required: t, actual: series.len() });
    }
    let window: Vec<f64> = series.values()[series.len() - t..].iter().map(|v| fit.scaler.scale(*v as f64)).collect();
    to_result(fit, series.index().last(), recursive_forecast(&fit.network, &window, horizon_hours)?)
}
