//! Windowed asymmetric STDP.
//!
//! For a pre/post pair with `Δs = t_pre - t_post` on the 1 ms grid:
//!
//! ```text
//! Δw = A⁺ exp(Δs / τ₊)    for -window ≤ Δs ≤ -dead_zone   (pre first: LTP)
//! Δw = A⁻ exp(-Δs / τ₋)   for  dead_zone ≤ Δs ≤ window    (post first: LTD)
//! Δw = 0                  otherwise
//! ```
//!
//! All qualifying pairs of a presentation are summed, scaled by the learning
//! rate, and added to the weights once the presentation ends.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backprop::{train_presentation, RegularizationMode};
use crate::encoding::{poisson_encode, RateMap};
use crate::error::SnnError;
use crate::seed::rng_for;
use crate::snn::{Network, SpikeRecord, Time};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StdpLayers {
    #[default]
    All,
    HiddenOnly,
    OutputOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdpConfig {
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus: f64,
    pub tau_minus: f64,
    pub learning_rate: f64,
    /// Largest `|Δs|` (ms) that still produces an update.
    pub window: u32,
    /// Smallest `|Δs|` (ms) that produces an update.
    pub dead_zone: u32,
    pub layers: StdpLayers,
}

impl Default for StdpConfig {
    fn default() -> Self {
        Self {
            a_plus: 0.6,
            a_minus: -0.3,
            tau_plus: 8.0,
            tau_minus: 5.0,
            learning_rate: 0.0001,
            window: 20,
            dead_zone: 1,
            layers: StdpLayers::All,
        }
    }
}

impl StdpConfig {
    fn updates_layer(&self, l: usize, n_layers: usize) -> bool {
        match self.layers {
            StdpLayers::All => true,
            StdpLayers::HiddenOnly => l + 1 < n_layers,
            StdpLayers::OutputOnly => l + 1 == n_layers,
        }
    }
}

pub fn stdp_delta(delta_s: i64, cfg: &StdpConfig) -> f64 {
    let dist = delta_s.unsigned_abs();
    if dist < u64::from(cfg.dead_zone) || dist > u64::from(cfg.window) || dist == 0 {
        return 0.0;
    }
    if delta_s < 0 {
        cfg.a_plus * (delta_s as f64 / cfg.tau_plus).exp()
    } else {
        cfg.a_minus * (-(delta_s as f64) / cfg.tau_minus).exp()
    }
}

/// `learning_rate · stdp_delta(Δs)` for `Δs ∈ [-window, window]`.
struct Kernel {
    window: i64,
    values: Vec<f64>,
}

impl Kernel {
    fn new(cfg: &StdpConfig) -> Self {
        let window = i64::from(cfg.window);
        Self {
            window,
            values: (-window..=window)
                .map(|ds| cfg.learning_rate * stdp_delta(ds, cfg))
                .collect(),
        }
    }

    #[inline]
    fn at(&self, ds: i64) -> f64 {
        self.values[(ds + self.window) as usize]
    }
}

/// Applies the summed all-to-all pair updates of one presentation to
/// `weights` (`post × pre`).
pub fn apply_stdp(
    pre: &SpikeRecord,
    post: &SpikeRecord,
    weights: &mut DMatrix<f64>,
    cfg: &StdpConfig,
) -> Result<(), SnnError> {
    if weights.nrows() != post.size() || weights.ncols() != pre.size() {
        return Err(SnnError::DimensionMismatch(format!(
            "weights are {}×{}, records are post {} × pre {}",
            weights.nrows(),
            weights.ncols(),
            post.size(),
            pre.size()
        )));
    }
    if pre.is_empty() || post.is_empty() || cfg.learning_rate == 0.0 {
        return Ok(());
    }
    let kernel = Kernel::new(cfg);
    let last_t = pre.events().last().map_or(0, |e| e.0);
    let pre_by_time = pre.by_time(last_t);
    let mut acc = vec![0.0; pre.size()];
    let mut touched = Vec::new();

    for (i, post_times) in post.times_by_neuron().iter().enumerate() {
        if post_times.is_empty() {
            continue;
        }
        for &t_post in post_times {
            let lo = i64::from(t_post) - kernel.window;
            let hi = (i64::from(t_post) + kernel.window).min(i64::from(last_t));
            for t_pre in lo.max(0)..=hi {
                let k = kernel.at(t_pre - i64::from(t_post));
                if k == 0.0 {
                    continue;
                }
                for &j in &pre_by_time[t_pre as usize] {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += k;
                }
            }
        }
        for &j in &touched {
            weights[(i, j)] += acc[j];
            acc[j] = 0.0;
        }
        touched.clear();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StdpStats {
    pub mean_hidden_spikes: f64,
    pub mean_output_spikes: f64,
}

/// One label-free pass: each sample is presented with threshold
/// regularization active, then STDP is applied to the selected weight
/// matrices.
#[allow(clippy::too_many_arguments)]
pub fn stdp_epoch(
    net: &mut Network,
    samples: &[&RateMap],
    cfg: &StdpConfig,
    rho: f64,
    mode: RegularizationMode,
    duration: Time,
    master_seed: u64,
    epoch: u64,
) -> Result<StdpStats, SnnError> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng_for(master_seed, "stdp-shuffle", epoch, 0));
    let n_layers = net.layers.len();
    let mut stats = StdpStats::default();
    for &idx in &order {
        let mut rng = rng_for(master_seed, "stdp-encode", epoch, idx as u64);
        let input = poisson_encode(samples[idx], duration, &mut rng);
        let records = train_presentation(net, &input, duration, rho, mode)?;
        stats.mean_hidden_spikes += records[0].len() as f64;
        stats.mean_output_spikes += records[n_layers - 1].len() as f64;
        for l in 0..n_layers {
            if !cfg.updates_layer(l, n_layers) {
                continue;
            }
            let pre = if l == 0 { &input } else { &records[l - 1] };
            apply_stdp(pre, &records[l], &mut net.layers[l].params.weights, cfg)?;
        }
    }
    let n = samples.len().max(1) as f64;
    stats.mean_hidden_spikes /= n;
    stats.mean_output_spikes /= n;
    Ok(stats)
}
