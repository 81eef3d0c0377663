//! Approximate-gradient supervised training.
//!
//! Spiking activity is summarized by exponential traces (`x` for inputs,
//! `a` for outputs) measured at the end of a presentation. The rate model
//!
//! ```text
//! a_i = s_i / v_th,i + sigma * sum_{j != i} kappa_ij a_j,    s_i = sum_k w_ik x_k
//! ```
//!
//! is treated as differentiable; its derivatives drive a backpropagation rule
//! with per-layer error normalization. Threshold regularization runs during
//! every training presentation to keep firing balanced across a layer.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoding::{poisson_encode, Sample};
use crate::error::SnnError;
use crate::seed::rng_for;
use crate::snn::{Decay, LayerParams, Network, SpikeRecord, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitDistribution {
    #[default]
    Uniform,
    /// Normal with variance `1/M`, resampled until inside `(-√(3/M), √(3/M))`.
    TruncatedNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizationMode {
    /// Firing neurons `+ρN`, every neuron `-ρN_w`.
    Classic,
    /// Firing neurons `+ρN`, only silent neurons `-ρN_w`.
    #[default]
    Modified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BpHyperParams {
    pub alpha: f64,
    pub eta_w: f64,
    pub eta_th: f64,
    pub gamma: f64,
    pub rho: f64,
    pub batch_size: usize,
    /// Trace value the labeled output neuron is driven toward.
    pub target_scale: f64,
    pub regularization: RegularizationMode,
    pub init: InitDistribution,
}

impl Default for BpHyperParams {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            eta_w: 0.002,
            eta_th: 0.0002,
            gamma: 1.0,
            rho: 0.00004,
            batch_size: 25,
            target_scale: 1.0,
            regularization: RegularizationMode::Modified,
            init: InitDistribution::Uniform,
        }
    }
}

/// Weights `U(-√(3/M), √(3/M))` and thresholds `α√(3/M)` for a layer of
/// `n_neurons` with fan-in `fan_in`.
pub fn init_layer<R: Rng + ?Sized>(
    n_neurons: usize,
    fan_in: usize,
    alpha: f64,
    dist: InitDistribution,
    rng: &mut R,
) -> (DMatrix<f64>, Vec<f64>) {
    assert!(fan_in >= 1);
    let bound = (3.0 / fan_in as f64).sqrt();
    let mut weights = DMatrix::zeros(n_neurons, fan_in);
    match dist {
        InitDistribution::Uniform => {
            for w in weights.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        InitDistribution::TruncatedNormal => {
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("finite std");
            for w in weights.iter_mut() {
                *w = loop {
                    let v: f64 = normal.sample(rng);
                    if v.abs() < bound {
                        break v;
                    }
                };
            }
        }
    }
    (weights, vec![alpha * bound; n_neurons])
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

/// Exponentially decaying spike accumulators, anchored at time `anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceVector {
    pub values: Vec<f64>,
    pub anchor: Time,
}

impl TraceVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            anchor: 0,
        }
    }

    /// Decays every value forward to `t`.
    pub fn advance(&mut self, t: Time, decay: &Decay) {
        debug_assert!(t >= self.anchor);
        if t > self.anchor {
            let f = decay.factor(t - self.anchor);
            for v in &mut self.values {
                *v *= f;
            }
            self.anchor = t;
        }
    }

    /// Incremental evaluation at `t` of a record: decay, then add one per
    /// spike. Spikes at exactly `t` count with weight 1.
    pub fn from_record(record: &SpikeRecord, t: Time, tau_mp: f64) -> Self {
        let decay = Decay::new(tau_mp);
        let mut trace = Self::zeros(record.size());
        for &(te, n) in record.events() {
            if te > t {
                break;
            }
            trace.advance(te, &decay);
            trace.values[n] += 1.0;
        }
        trace.advance(t, &decay);
        trace
    }
}

/// Direct sum `Σ_p exp((t_p - t) / τ)` over spike times `t_p ≤ t`.
pub fn accumulate_trace(spike_times: &[Time], t: Time, tau_mp: f64) -> f64 {
    spike_times
        .iter()
        .filter(|&&tp| tp <= t)
        .map(|&tp| ((f64::from(tp) - f64::from(t)) / tau_mp).exp())
        .sum()
}

// ---------------------------------------------------------------------------
// Rate model
// ---------------------------------------------------------------------------

/// `M = I - σ·κ_offdiag`, so the rate model reads `M a = s / v_th`.
pub fn system_matrix(sigma: f64, kappa: &DMatrix<f64>) -> DMatrix<f64> {
    let n = kappa.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { -sigma * kappa[(i, j)] })
}

pub fn uniform_kappa(n: usize, mu: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { mu })
}

fn check_uniform_solvable(n: usize, mu: f64, sigma: f64) -> Result<(), SnnError> {
    // Eigenvalues of I - σμ(11ᵀ - I): 1 + σμ (n-1 times) and 1 - σμ(n-1).
    let ms = mu * sigma;
    let bulk = 1.0 + ms;
    let mean = 1.0 - ms * (n as f64 - 1.0);
    if n > 1 && bulk.abs() < 1e-12 {
        return Err(SnnError::SingularSystem(format!("1 + mu*sigma = {bulk}")));
    }
    if mean.abs() < 1e-12 {
        return Err(SnnError::SingularSystem(format!("1 - mu*sigma*(n-1) = {mean}")));
    }
    Ok(())
}

fn weighted_input(x: &[f64], weights: &DMatrix<f64>, thresholds: &[f64]) -> Result<DVector<f64>, SnnError> {
    if x.len() != weights.ncols() {
        return Err(SnnError::DimensionMismatch(format!(
            "{} input traces for {} synapses",
            x.len(),
            weights.ncols()
        )));
    }
    let s = weights * DVector::from_column_slice(x);
    Ok(DVector::from_iterator(
        s.len(),
        s.iter().zip(thresholds).map(|(s, v)| s / v),
    ))
}

/// Unclamped solution of the coupled rate model with an arbitrary `κ`.
pub fn solve_rates_general(
    x: &[f64],
    weights: &DMatrix<f64>,
    thresholds: &[f64],
    sigma: f64,
    kappa: &DMatrix<f64>,
) -> Result<Vec<f64>, SnnError> {
    let rhs = weighted_input(x, weights, thresholds)?;
    system_matrix(sigma, kappa)
        .lu()
        .solve(&rhs)
        .map(|a| a.iter().copied().collect())
        .ok_or_else(|| SnnError::SingularSystem("LU pivot is zero".to_string()))
}

/// Unclamped solution for a layer with uniform inhibition `κ_ij = μ`.
pub fn solve_rates(x: &[f64], layer: &LayerParams) -> Result<Vec<f64>, SnnError> {
    check_uniform_solvable(layer.n_out(), layer.mu, layer.sigma)?;
    solve_rates_general(
        x,
        &layer.weights,
        &layer.thresholds,
        layer.sigma,
        &uniform_kappa(layer.n_out(), layer.mu),
    )
}

/// Rate-model activities, clamped at zero from below.
pub fn rate_forward(x: &[f64], layer: &LayerParams) -> Result<Vec<f64>, SnnError> {
    Ok(solve_rates(x, layer)?.into_iter().map(|a| a.max(0.0)).collect())
}

/// `∂a/∂x_k` over all neurons for uniform inhibition, via the closed-form
/// inverse of `(1 + σμ)I - σμ·11ᵀ`:
///
/// ```text
/// ∂a_i/∂x_k = (1/v_i) · 1/(1 + μσ) · (w_ik + μσ·v_i/(1 - μσ(n-1)) · Σ_j w_jk / v_j)
/// ```
pub fn input_jacobian_uniform(layer: &LayerParams, k: usize) -> Result<Vec<f64>, SnnError> {
    let n = layer.n_out();
    if k >= layer.n_in() {
        return Err(SnnError::IndexOutOfRange {
            index: k,
            len: layer.n_in(),
        });
    }
    check_uniform_solvable(n, layer.mu, layer.sigma)?;
    let ms = layer.mu * layer.sigma;
    let col = layer.weights.column(k);
    let scaled_sum: f64 = col.iter().zip(&layer.thresholds).map(|(w, v)| w / v).sum();
    let coupling = ms / (1.0 - ms * (n as f64 - 1.0));
    Ok((0..n)
        .map(|i| {
            let v = layer.thresholds[i];
            (1.0 / v) / (1.0 + ms) * (col[i] + coupling * v * scaled_sum)
        })
        .collect())
}

/// `∂a/∂x_k` from the matrix form `(1/σ)·[q·I - κ_offdiag]⁻¹ · (w_·k / v_th)`
/// with `q = 1/σ`, for arbitrary `κ`.
pub fn input_jacobian_matrix(
    weights: &DMatrix<f64>,
    thresholds: &[f64],
    sigma: f64,
    kappa: &DMatrix<f64>,
    k: usize,
) -> Result<Vec<f64>, SnnError> {
    let n = weights.nrows();
    let b = DVector::from_iterator(n, (0..n).map(|i| weights[(i, k)] / thresholds[i]));
    if sigma == 0.0 {
        return Ok(b.iter().copied().collect());
    }
    let q = 1.0 / sigma;
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { q } else { -kappa[(i, j)] });
    let y = m
        .lu()
        .solve(&b)
        .ok_or_else(|| SnnError::SingularSystem("LU pivot is zero".to_string()))?;
    Ok(y.iter().map(|v| v / sigma).collect())
}

/// Direct partial derivatives of the rate model with the other activities
/// held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct RatePartials {
    /// `∂a_i/∂s_i = 1/v_th,i`
    pub d_s: Vec<f64>,
    /// `∂a_i/∂w_ik = x_k / v_th,i`, shape `n × m`
    pub d_w: DMatrix<f64>,
    /// `∂a_i/∂v_th,i = (1/v_th,i)(-a_i + σ Σ_{j≠i} κ_ij a_j)`
    pub d_vth: Vec<f64>,
    /// `∂a_i/∂κ_ih = σ a_h` (zero on the diagonal), shape `n × n`
    pub d_kappa: DMatrix<f64>,
}

pub fn rate_partials(
    x: &[f64],
    a: &[f64],
    thresholds: &[f64],
    sigma: f64,
    kappa: &DMatrix<f64>,
) -> RatePartials {
    let n = thresholds.len();
    let d_s: Vec<f64> = thresholds.iter().map(|v| 1.0 / v).collect();
    let d_w = DMatrix::from_fn(n, x.len(), |i, k| d_s[i] * x[k]);
    let d_vth = (0..n)
        .map(|i| {
            let inhibition: f64 = (0..n).filter(|&j| j != i).map(|j| kappa[(i, j)] * a[j]).sum();
            d_s[i] * (-a[i] + sigma * inhibition)
        })
        .collect();
    let d_kappa = DMatrix::from_fn(n, n, |i, h| {
        if i == h {
            0.0
        } else {
            d_s[i] * sigma * thresholds[i] * a[h]
        }
    });
    RatePartials {
        d_s,
        d_w,
        d_vth,
        d_kappa,
    }
}

/// Propagates a direct partial through the coupling: solves `M·y = partial`.
pub fn total_derivative(sigma: f64, kappa: &DMatrix<f64>, partial: &[f64]) -> Result<Vec<f64>, SnnError> {
    system_matrix(sigma, kappa)
        .lu()
        .solve(&DVector::from_column_slice(partial))
        .map(|y| y.iter().copied().collect())
        .ok_or_else(|| SnnError::SingularSystem("LU pivot is zero".to_string()))
}

// ---------------------------------------------------------------------------
// Error backpropagation
// ---------------------------------------------------------------------------

/// `½ Σ (a_i - T·1[i = label])²`
pub fn squared_error(a: &[f64], label: usize, target_scale: f64) -> Result<f64, SnnError> {
    Ok(output_delta(a, label, target_scale)?.iter().map(|d| 0.5 * d * d).sum())
}

/// `∂L/∂a_i = a_i - T·1[i = label]`
pub fn output_delta(a: &[f64], label: usize, target_scale: f64) -> Result<Vec<f64>, SnnError> {
    if label >= a.len() {
        return Err(SnnError::InvalidLabel(label));
    }
    Ok(a
        .iter()
        .enumerate()
        .map(|(i, &ai)| if i == label { ai - target_scale } else { ai })
        .collect())
}

/// Normalized error for a layer from the layer above:
///
/// `δ_i = (g_i / ḡ) · √(M/m) · Σ_j w_ji δ_j`, with `g_i = 1/v_th,i`, `ḡ` the
/// RMS of `g` over active neurons, `M` the downstream fan-in and `m` the
/// number of active synapses feeding it (= active neurons here).
pub fn backprop_delta(
    downstream: &LayerParams,
    downstream_delta: &[f64],
    thresholds: &[f64],
    active: &[bool],
) -> Vec<f64> {
    let fan_in = downstream.n_in();
    let m = active.iter().filter(|&&a| a).count();
    if m == 0 {
        return vec![0.0; fan_in];
    }
    let g_sq: f64 = thresholds
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(v, _)| 1.0 / (v * v))
        .sum();
    let g_bar = (g_sq / m as f64).sqrt();
    let norm = (fan_in as f64 / m as f64).sqrt();
    let delta = DVector::from_column_slice(downstream_delta);
    let back = downstream.weights.tr_mul(&delta);
    (0..fan_in)
        .map(|i| (1.0 / thresholds[i]) / g_bar * norm * back[i])
        .collect()
}

/// Additive parameter change for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerUpdate {
    pub d_weights: DMatrix<f64>,
    pub d_thresholds: Vec<f64>,
}

impl LayerUpdate {
    pub fn zeros(n_out: usize, n_in: usize) -> Self {
        Self {
            d_weights: DMatrix::zeros(n_out, n_in),
            d_thresholds: vec![0.0; n_out],
        }
    }

    pub fn apply(&self, layer: &mut LayerParams, scale: f64) {
        for (w, d) in layer.weights.iter_mut().zip(self.d_weights.iter()) {
            *w += scale * d;
        }
        for (th, d) in layer.thresholds.iter_mut().zip(&self.d_thresholds) {
            *th += scale * d;
        }
        layer.floor_thresholds();
    }
}

/// What one presentation knows about a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivity {
    /// Input traces.
    pub x: Vec<f64>,
    /// Output traces.
    pub a: Vec<f64>,
    /// Inputs that carried at least one spike.
    pub active_inputs: Vec<bool>,
    /// Neurons that fired at least once.
    pub active_neurons: Vec<bool>,
}

/// Adds this presentation's update to `acc`:
///
/// ```text
/// Δw_ij  = -η_w  · √(N/m)      · δ_i · x_j
/// Δv_th,i = η_th · √(N/(m·N))  · δ_i · â_i,   â_i = γ a_i - σ Σ_{j≠i} κ_ij a_j
/// ```
///
/// `N` is the layer size and `m` the number of active inputs. Neurons that
/// stayed silent sit on the clamped side of the rate model and get no update.
pub fn accumulate_update(
    acc: &mut LayerUpdate,
    layer: &LayerParams,
    delta: &[f64],
    activity: &LayerActivity,
    hyper: &BpHyperParams,
) {
    let m = activity.active_inputs.iter().filter(|&&a| a).count();
    if m == 0 {
        return;
    }
    let n = layer.n_out() as f64;
    let m = m as f64;
    let coef_w = -hyper.eta_w * (n / m).sqrt();
    let coef_th = hyper.eta_th * (n / (m * n)).sqrt();
    let total_a: f64 = activity.a.iter().sum();
    let active_cols: Vec<usize> = activity
        .active_inputs
        .iter()
        .enumerate()
        .filter(|(_, &a)| a)
        .map(|(j, _)| j)
        .collect();
    for i in 0..layer.n_out() {
        if !activity.active_neurons[i] || delta[i] == 0.0 {
            continue;
        }
        let scaled = coef_w * delta[i];
        for &j in &active_cols {
            acc.d_weights[(i, j)] += scaled * activity.x[j];
        }
        let a_hat = hyper.gamma * activity.a[i] - layer.sigma * layer.mu * (total_a - activity.a[i]);
        acc.d_thresholds[i] += coef_th * delta[i] * a_hat;
    }
}

/// Adjusts thresholds after `fired` (ascending, unique) neurons spiked.
pub fn regularize_thresholds(thresholds: &mut [f64], fired: &[usize], rho: f64, mode: RegularizationMode) {
    if fired.is_empty() || rho == 0.0 {
        return;
    }
    let n = thresholds.len() as f64;
    let n_w = fired.len() as f64;
    let up = rho * n;
    let down = rho * n_w;
    match mode {
        RegularizationMode::Classic => {
            for th in thresholds.iter_mut() {
                *th -= down;
            }
            for &i in fired {
                thresholds[i] += up;
            }
        }
        RegularizationMode::Modified => {
            let mut next = 0;
            for (i, th) in thresholds.iter_mut().enumerate() {
                if fired.get(next) == Some(&i) {
                    *th += up;
                    next += 1;
                } else {
                    *th -= down;
                }
            }
        }
    }
    for th in thresholds.iter_mut() {
        if !(*th >= crate::snn::THRESHOLD_FLOOR) {
            *th = crate::snn::THRESHOLD_FLOOR;
        }
    }
}

/// Per-layer traces and active sets from one simulated presentation. Layer
/// `l`'s output trace is, by construction, layer `l+1`'s input trace.
pub fn layer_activities(input: &SpikeRecord, records: &[SpikeRecord], t: Time, tau_mp: f64) -> Vec<LayerActivity> {
    let mut x = TraceVector::from_record(input, t, tau_mp).values;
    let mut active_inputs: Vec<bool> = input.counts().iter().map(|&c| c > 0).collect();
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let a = TraceVector::from_record(record, t, tau_mp).values;
        let active_neurons: Vec<bool> = record.counts().iter().map(|&c| c > 0).collect();
        out.push(LayerActivity {
            x: std::mem::replace(&mut x, a.clone()),
            a,
            active_inputs: std::mem::replace(&mut active_inputs, active_neurons.clone()),
            active_neurons,
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Mean spikes per presentation, per layer (hidden, output).
    pub mean_hidden_spikes: f64,
    pub mean_output_spikes: f64,
}

/// Simulates one presentation with threshold regularization active.
pub fn train_presentation(
    net: &mut Network,
    input: &SpikeRecord,
    duration: Time,
    rho: f64,
    mode: RegularizationMode,
) -> Result<Vec<SpikeRecord>, SnnError> {
    net.run_with(input, duration, |_, params, fired| {
        regularize_thresholds(&mut params.thresholds, fired, rho, mode)
    })
}

/// One pass over `samples` in a seeded shuffled order, applying the mean
/// update of every batch.
pub fn bp_epoch(
    net: &mut Network,
    samples: &[Sample],
    hyper: &BpHyperParams,
    duration: Time,
    master_seed: u64,
    epoch: u64,
) -> Result<EpochStats, SnnError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng_for(master_seed, "bp-shuffle", epoch, 0));
    let tau = net.tau_mp();
    let mut updates: Vec<LayerUpdate> = net
        .layers
        .iter()
        .map(|l| LayerUpdate::zeros(l.params.n_out(), l.params.n_in()))
        .collect();
    let mut stats = EpochStats::default();

    for batch in order.chunks(hyper.batch_size.max(1)) {
        for u in &mut updates {
            u.d_weights.fill(0.0);
            u.d_thresholds.fill(0.0);
        }
        for &idx in batch {
            let sample = &samples[idx];
            let mut rng = rng_for(master_seed, "bp-encode", epoch, sample.id as u64);
            let input = poisson_encode(&sample.rates, duration, &mut rng);
            let records = train_presentation(net, &input, duration, hyper.rho, hyper.regularization)?;
            let activity = layer_activities(&input, &records, duration, tau);

            let last = activity.len() - 1;
            let mut delta = output_delta(&activity[last].a, sample.label, hyper.target_scale)?;
            stats.mean_loss += delta.iter().map(|d| 0.5 * d * d).sum::<f64>();
            stats.mean_hidden_spikes += records[0].len() as f64;
            stats.mean_output_spikes += records[last].len() as f64;
            for l in (0..=last).rev() {
                accumulate_update(&mut updates[l], &net.layers[l].params, &delta, &activity[l], hyper);
                if l > 0 {
                    delta = backprop_delta(
                        &net.layers[l].params,
                        &delta,
                        &net.layers[l - 1].params.thresholds,
                        &activity[l - 1].active_neurons,
                    );
                }
            }
        }
        let scale = 1.0 / batch.len() as f64;
        for (layer, u) in net.layers.iter_mut().zip(&updates) {
            u.apply(&mut layer.params, scale);
        }
    }
    let n = samples.len().max(1) as f64;
    stats.mean_loss /= n;
    stats.mean_hidden_spikes /= n;
    stats.mean_output_spikes /= n;
    Ok(stats)
}
