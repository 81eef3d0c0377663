//! Clocked simulation of leaky integrate-and-fire layers with
//! winner-take-all lateral inhibition.
//!
//! Time advances on a 1 ms grid. Within one step every layer first integrates
//! all spikes that arrived at that step, then checks thresholds in ascending
//! neuron index. A neuron fires at most once per step; each firing
//! immediately inhibits the other neurons of its layer, so a later neuron may
//! be pushed back under threshold before it is checked. Spikes emitted by a
//! layer reach the next layer in the same step.

use nalgebra::DMatrix;

use crate::error::SnnError;

/// Simulation time in milliseconds.
pub type Time = u32;

/// Lowest threshold any update may leave behind.
pub const THRESHOLD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeuronState {
    pub v_mp: f64,
    pub t_last_update: Time,
    pub t_last_fire: Option<Time>,
    pub spike_count: u32,
}

/// Input efficacy factor right after a spike.
///
/// `(elapsed / t_ref)^2` while the neuron is refractory, 1 otherwise. With the
/// default `t_ref` of 1 ms and a 1 ms grid this is always 1.
pub fn refractory_gain(t_last_fire: Option<Time>, t_p: Time, t_ref: f64) -> f64 {
    match t_last_fire {
        Some(t_out) => {
            let elapsed = f64::from(t_p.saturating_sub(t_out));
            if elapsed < t_ref {
                (elapsed / t_ref).powi(2)
            } else {
                1.0
            }
        }
        None => 1.0,
    }
}

/// Cached membrane decay `exp(-dt / tau)` for the common one-step interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decay {
    tau: f64,
    one_step: f64,
}

impl Decay {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            one_step: (-1.0 / tau).exp(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    #[inline]
    pub fn factor(&self, dt: Time) -> f64 {
        match dt {
            0 => 1.0,
            1 => self.one_step,
            _ => (-f64::from(dt) / self.tau).exp(),
        }
    }
}

impl NeuronState {
    /// Event-driven membrane update: decay since the last input, then add the
    /// weighted input scaled by the refractory gain.
    pub fn lif_update(
        &mut self,
        w_in: f64,
        t_p: Time,
        decay: &Decay,
        t_ref: f64,
    ) -> Result<(), SnnError> {
        if t_p < self.t_last_update {
            return Err(SnnError::NonMonotoneTime {
                t: t_p,
                last: self.t_last_update,
            });
        }
        let gain = refractory_gain(self.t_last_fire, t_p, t_ref);
        self.v_mp = self.v_mp * decay.factor(t_p - self.t_last_update) + w_in * gain;
        self.t_last_update = t_p;
        Ok(())
    }

    /// Fires if the potential strictly exceeds `v_th`, subtracting the
    /// threshold (never resetting to a constant). At most one spike per call.
    pub fn fire_and_reset(&mut self, v_th: f64, t: Time) -> bool {
        if self.v_mp > v_th {
            self.v_mp -= v_th;
            self.t_last_fire = Some(t);
            self.spike_count += 1;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `n_out × n_in`; column `k` holds the fan-out of input `k`.
    pub weights: DMatrix<f64>,
    pub thresholds: Vec<f64>,
    /// Uniform lateral inhibition strength, in `[-1, 0]`.
    pub mu: f64,
    /// Inhibition scale, in `[0, 1]`.
    pub sigma: f64,
    pub tau_mp: f64,
}

impl LayerParams {
    pub fn new(
        weights: DMatrix<f64>,
        thresholds: Vec<f64>,
        mu: f64,
        sigma: f64,
        tau_mp: f64,
    ) -> Result<Self, SnnError> {
        if thresholds.len() != weights.nrows() {
            return Err(SnnError::DimensionMismatch(format!(
                "{} thresholds for {} neurons",
                thresholds.len(),
                weights.nrows()
            )));
        }
        if !(-1.0..=0.0).contains(&mu) {
            return Err(SnnError::Config(format!("mu = {mu} outside [-1, 0]")));
        }
        if !(0.0..=1.0).contains(&sigma) {
            return Err(SnnError::Config(format!("sigma = {sigma} outside [0, 1]")));
        }
        if tau_mp <= 0.0 {
            return Err(SnnError::Config(format!("tau_mp = {tau_mp} must be positive")));
        }
        let mut params = Self {
            weights,
            thresholds,
            mu,
            sigma,
            tau_mp,
        };
        params.floor_thresholds();
        Ok(params)
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn floor_thresholds(&mut self) {
        for th in &mut self.thresholds {
            if !(*th >= THRESHOLD_FLOOR) {
                *th = THRESHOLD_FLOOR;
            }
        }
    }
}

/// Every neuron other than `winner` loses `sigma * v_th_j * |mu|`.
pub fn apply_lateral_inhibition(states: &mut [NeuronState], winner: usize, params: &LayerParams) {
    let scale = params.sigma * params.mu;
    if scale == 0.0 {
        return;
    }
    for (j, (state, th)) in states.iter_mut().zip(&params.thresholds).enumerate() {
        if j != winner {
            state.v_mp += scale * th;
        }
    }
}

/// Time-ordered firing events of one population over one presentation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpikeRecord {
    size: usize,
    events: Vec<(Time, usize)>,
}

impl SpikeRecord {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            events: Vec::new(),
        }
    }

    /// Builds a record from arbitrary events, sorting them and rejecting
    /// duplicates or out-of-range neurons.
    pub fn from_events(size: usize, mut events: Vec<(Time, usize)>) -> Result<Self, SnnError> {
        events.sort_unstable();
        let mut record = Self::new(size);
        for (t, n) in events {
            record.push(t, n)?;
        }
        Ok(record)
    }

    pub fn push(&mut self, t: Time, neuron: usize) -> Result<(), SnnError> {
        if neuron >= self.size {
            return Err(SnnError::IndexOutOfRange {
                index: neuron,
                len: self.size,
            });
        }
        if let Some(&last) = self.events.last() {
            if (t, neuron) <= last {
                return Err(SnnError::UnorderedEvent { t, neuron });
            }
        }
        self.events.push((t, neuron));
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn events(&self) -> &[(Time, usize)] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn counts(&self) -> Vec<u32> {
        let mut counts = vec![0; self.size];
        for &(_, n) in &self.events {
            counts[n] += 1;
        }
        counts
    }

    pub fn times_by_neuron(&self) -> Vec<Vec<Time>> {
        let mut times = vec![Vec::new(); self.size];
        for &(t, n) in &self.events {
            times[n].push(t);
        }
        times
    }

    /// Neuron indices grouped per time step `0..=last`.
    pub fn by_time(&self, last: Time) -> Vec<Vec<usize>> {
        let mut buckets = vec![Vec::new(); last as usize + 1];
        for &(t, n) in &self.events {
            if t <= last {
                buckets[t as usize].push(n);
            }
        }
        buckets
    }
}

/// One feed-forward layer: parameters plus per-neuron dynamic state.
#[derive(Debug, Clone)]
pub struct Layer {
    pub params: LayerParams,
    pub states: Vec<NeuronState>,
    decay: Decay,
    current: Vec<f64>,
}

impl Layer {
    pub fn new(params: LayerParams) -> Self {
        let n = params.n_out();
        let decay = Decay::new(params.tau_mp);
        Self {
            params,
            states: vec![NeuronState::default(); n],
            decay,
            current: vec![0.0; n],
        }
    }

    pub fn size(&self) -> usize {
        self.params.n_out()
    }

    pub fn reset(&mut self) {
        self.states.fill(NeuronState::default());
    }

    /// Integrates the spikes that arrived at `t`, then resolves firing in
    /// ascending index order with immediate inhibition. Returns the indices
    /// that fired, ascending.
    pub fn simulate_timestep(
        &mut self,
        input_spikes: &[usize],
        t: Time,
        t_ref: f64,
    ) -> Result<Vec<usize>, SnnError> {
        let n_in = self.params.n_in();
        let n = self.states.len();
        // Column-major storage: the fan-out of input k is one contiguous run.
        let weights = self.params.weights.as_slice();
        self.current.fill(0.0);
        for &k in input_spikes {
            if k >= n_in {
                return Err(SnnError::IndexOutOfRange { index: k, len: n_in });
            }
            for (c, w) in self.current.iter_mut().zip(&weights[k * n..(k + 1) * n]) {
                *c += w;
            }
        }
        for (state, &w_in) in self.states.iter_mut().zip(&self.current) {
            state.lif_update(w_in, t, &self.decay, t_ref)?;
        }

        let mut fired = Vec::new();
        for i in 0..self.states.len() {
            if self.states[i].fire_and_reset(self.params.thresholds[i], t) {
                fired.push(i);
                apply_lateral_inhibition(&mut self.states, i, &self.params);
            }
        }
        Ok(fired)
    }
}

/// Feed-forward stack of layers sharing one membrane time constant.
#[derive(Debug, Clone)]
pub struct Network {
    pub n_inputs: usize,
    pub layers: Vec<Layer>,
    pub t_ref: f64,
}

impl Network {
    pub fn new(n_inputs: usize, params: Vec<LayerParams>, t_ref: f64) -> Result<Self, SnnError> {
        let mut fan_in = n_inputs;
        for (l, p) in params.iter().enumerate() {
            if p.n_in() != fan_in {
                return Err(SnnError::DimensionMismatch(format!(
                    "layer {l} expects {} inputs, previous layer has {fan_in}",
                    p.n_in()
                )));
            }
            if p.tau_mp != params[0].tau_mp {
                return Err(SnnError::Config(
                    "all layers must share one tau_mp".to_string(),
                ));
            }
            fan_in = p.n_out();
        }
        Ok(Self {
            n_inputs,
            layers: params.into_iter().map(Layer::new).collect(),
            t_ref,
        })
    }

    pub fn tau_mp(&self) -> f64 {
        self.layers[0].params.tau_mp
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.n_inputs)
            .chain(self.layers.iter().map(Layer::size))
            .collect()
    }

    /// Zeroes membrane potentials, spike counts and firing times. Weights and
    /// thresholds are left alone.
    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.reset();
        }
    }

    pub fn run(&mut self, input: &SpikeRecord, duration: Time) -> Result<Vec<SpikeRecord>, SnnError> {
        self.run_with(input, duration, |_, _, _| {})
    }

    /// Presents `input` for `t = 1..=duration` from a freshly reset state.
    ///
    /// `on_step(layer, params, fired)` runs after each layer resolves a step;
    /// the training loops use it for threshold regularization.
    pub fn run_with<F>(
        &mut self,
        input: &SpikeRecord,
        duration: Time,
        mut on_step: F,
    ) -> Result<Vec<SpikeRecord>, SnnError>
    where
        F: FnMut(usize, &mut LayerParams, &[usize]),
    {
        if input.size() != self.n_inputs {
            return Err(SnnError::DimensionMismatch(format!(
                "input record has {} channels, network expects {}",
                input.size(),
                self.n_inputs
            )));
        }
        self.reset();
        let mut records: Vec<SpikeRecord> =
            self.layers.iter().map(|l| SpikeRecord::new(l.size())).collect();
        let events = input.events();
        let mut cursor = 0;
        let mut arrived = Vec::new();
        for t in 1..=duration {
            arrived.clear();
            while cursor < events.len() && events[cursor].0 <= t {
                if events[cursor].0 == t {
                    arrived.push(events[cursor].1);
                }
                cursor += 1;
            }
            for (l, layer) in self.layers.iter_mut().enumerate() {
                let fired = layer.simulate_timestep(&arrived, t, self.t_ref)?;
                on_step(l, &mut layer.params, &fired);
                for &n in &fired {
                    records[l].push(t, n)?;
                }
                arrived.clear();
                arrived.extend_from_slice(&fired);
            }
        }
        Ok(records)
    }

    pub fn params(&self) -> Vec<&LayerParams> {
        self.layers.iter().map(|l| &l.params).collect()
    }
}
