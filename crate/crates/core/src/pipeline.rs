//! Training schedules and evaluation.
//!
//! * proposed: BP on the labeled set, then label-free STDP on the unlabeled set
//! * bp-only: the BP phase alone
//! * self-training: BP rounds on a pool that grows by pseudo-labeling the
//!   most confident unlabeled samples

use std::fmt;
use std::time::Instant;

use crate::backprop::{bp_epoch, init_layer, BpHyperParams};
use crate::config::{GuardConfig, NetworkConfig, RunConfig};
use crate::encoding::{encode_image, poisson_encode, Image, RateMap, Sample};
use crate::error::SnnError;
use crate::mnist::{Dataset, Splits, SIDE};
use crate::seed::rng_for;
use crate::snn::{LayerParams, Network, Time};
use crate::stdp::stdp_epoch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Bp,
    Stdp,
    /// Self-training round, 1-based.
    SelfTrain(usize),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Bp => f.write_str("bp"),
            Phase::Stdp => f.write_str("stdp"),
            Phase::SelfTrain(k) => write!(f, "selftrain-round{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based, counted across all phases.
    pub epoch: usize,
    pub phase: Phase,
    pub mean_accuracy: f64,
    pub accuracy_std: f64,
    /// Cumulative simulated training time: total length of all training and
    /// pseudo-labeling presentations so far. Reproducible, unlike `wall_seconds`.
    pub seconds: f64,
    /// Cumulative wall-clock time since training started, evaluation included.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub per_set: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation across the sets.
    pub std: f64,
}

impl Accuracy {
    pub fn from_per_set(per_set: Vec<f64>) -> Self {
        let n = per_set.len().max(1) as f64;
        let mean = per_set.iter().sum::<f64>() / n;
        let var = per_set.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            per_set,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Encoded samples for the three split roles.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub labeled: Vec<Sample>,
    pub unlabeled: Vec<Sample>,
    pub test_sets: Vec<Vec<Sample>>,
}

impl ExperimentData {
    pub fn from_splits(dataset: &Dataset, splits: &Splits, f_max: f64) -> Self {
        let encode = |idx: &[usize]| -> Vec<Sample> {
            idx.iter()
                .map(|&i| Sample {
                    id: i,
                    label: usize::from(dataset.labels[i]),
                    rates: encode_image(&Image::from_bytes(SIDE, SIDE, &dataset.images[i]), f_max),
                })
                .collect()
        };
        Self {
            labeled: encode(&splits.labeled),
            unlabeled: encode(&splits.unlabeled),
            test_sets: splits.test_sets.iter().map(|s| encode(s)).collect(),
        }
    }
}

/// Hidden and output layers, freshly initialized. `variant` selects an
/// independent initialization for the same master seed.
pub fn build_network(
    net: &NetworkConfig,
    hyper: &BpHyperParams,
    master_seed: u64,
    variant: u64,
) -> Result<Network, SnnError> {
    let sizes = [net.inputs, net.hidden, net.outputs];
    let mus = [net.mu_hidden, net.mu_output];
    let mut params = Vec::with_capacity(2);
    for l in 0..2 {
        let mut rng = rng_for(master_seed, "init", variant, l as u64);
        let (w, th) = init_layer(sizes[l + 1], sizes[l], hyper.alpha, hyper.init, &mut rng);
        params.push(LayerParams::new(w, th, mus[l], net.sigma, net.tau_mp)?);
    }
    Network::new(net.inputs, params, net.t_ref)
}

/// Argmax with ties going to the lowest index (all-zero counts give 0).
pub fn argmax_lowest(counts: &[u32]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Output-layer spike counts for one presentation. No learning happens.
pub fn output_counts(
    net: &mut Network,
    rates: &RateMap,
    duration: Time,
    master_seed: u64,
    tag: &str,
    epoch: u64,
    id: u64,
) -> Result<Vec<u32>, SnnError> {
    let input = poisson_encode(rates, duration, &mut rng_for(master_seed, tag, epoch, id));
    let records = net.run(&input, duration)?;
    Ok(records.last().map(|r| r.counts()).unwrap_or_default())
}

pub fn classify(
    net: &mut Network,
    rates: &RateMap,
    duration: Time,
    master_seed: u64,
    id: u64,
) -> Result<usize, SnnError> {
    Ok(argmax_lowest(&output_counts(net, rates, duration, master_seed, "eval", 0, id)?))
}

/// Per-set accuracy of an arbitrary classifier.
pub fn evaluate_with<F>(test_sets: &[Vec<Sample>], mut predict: F) -> Result<Accuracy, SnnError>
where
    F: FnMut(&Sample) -> Result<usize, SnnError>,
{
    let mut per_set = Vec::with_capacity(test_sets.len());
    for set in test_sets {
        let mut correct = 0usize;
        for s in set {
            if predict(s)? == s.label {
                correct += 1;
            }
        }
        per_set.push(correct as f64 / set.len().max(1) as f64);
    }
    Ok(Accuracy::from_per_set(per_set))
}

/// Evaluates on a scratch copy, so `net` is untouched. Test spike trains
/// depend only on the master seed and sample id, so every epoch sees the
/// same inputs.
pub fn evaluate(
    net: &Network,
    test_sets: &[Vec<Sample>],
    duration: Time,
    master_seed: u64,
) -> Result<Accuracy, SnnError> {
    let mut scratch = net.clone();
    evaluate_with(test_sets, |s| {
        classify(&mut scratch, &s.rates, duration, master_seed, s.id as u64)
    })
}

pub fn improvement_rate(acc_before: f64, acc_after: f64) -> Result<f64, SnnError> {
    if acc_before == 0.0 {
        return Err(SnnError::ZeroBaseline);
    }
    Ok(acc_after / acc_before)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardDecision {
    Continue,
    Stop,
}

/// Stops the STDP phase once the mean of the last `patience` STDP-phase
/// accuracies sits more than `margin` below the BP-phase-end accuracy.
pub fn stdp_guard(stdp_accuracies: &[f64], bp_end: f64, guard: &GuardConfig) -> GuardDecision {
    let Some(patience) = guard.patience else {
        return GuardDecision::Continue;
    };
    if patience == 0 || stdp_accuracies.len() < patience {
        return GuardDecision::Continue;
    }
    let window = &stdp_accuracies[stdp_accuracies.len() - patience..];
    let mean = window.iter().sum::<f64>() / patience as f64;
    if mean < bp_end - guard.margin {
        GuardDecision::Stop
    } else {
        GuardDecision::Continue
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundInfo {
    pub round: usize,
    /// Metrics epoch at which the round's training starts (1-based).
    pub first_epoch: usize,
    pub pool_size: usize,
    pub remaining_unlabeled: usize,
    /// Fraction of the pseudo-labels assigned after this round that match
    /// the hidden true labels. `None` for the last round.
    pub pseudo_label_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub network: Network,
    pub bp_end_accuracy: Option<f64>,
    /// STDP epoch (1-based within the phase) at which the guard fired.
    pub stopped_at: Option<usize>,
    pub rounds: Vec<RoundInfo>,
}

impl TrainOutcome {
    pub fn best(&self) -> Option<&EpochMetrics> {
        let mut best: Option<&EpochMetrics> = None;
        for m in &self.metrics {
            if best.is_none_or(|b| m.mean_accuracy > b.mean_accuracy) {
                best = Some(m);
            }
        }
        best
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.metrics.last().map(|m| m.mean_accuracy)
    }
}

struct Recorder<'a> {
    cfg: &'a RunConfig,
    test_sets: &'a [Vec<Sample>],
    metrics: Vec<EpochMetrics>,
    sim_seconds: f64,
    started: Instant,
    on_epoch: &'a mut dyn FnMut(&EpochMetrics),
}

impl Recorder<'_> {
    fn add_simulated(&mut self, presentations: usize, duration: Time) {
        self.sim_seconds += presentations as f64 * f64::from(duration) * 1e-3;
    }

    fn record(&mut self, net: &Network, phase: Phase) -> Result<f64, SnnError> {
        let acc = evaluate(
            net,
            self.test_sets,
            self.cfg.schedule.presentation_ms_test,
            self.cfg.seed,
        )?;
        let m = EpochMetrics {
            epoch: self.metrics.len() + 1,
            phase,
            mean_accuracy: acc.mean,
            accuracy_std: acc.std,
            seconds: self.sim_seconds,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        (self.on_epoch)(&m);
        self.metrics.push(m);
        Ok(acc.mean)
    }

    fn epoch_count(&self) -> usize {
        self.metrics.len()
    }
}

fn should_eval(done: usize, total: usize, every: usize) -> bool {
    done == total || done.is_multiple_of(every.max(1))
}

/// BP for `schedule.bp_epochs`, then STDP for up to `schedule.stdp_epochs`,
/// evaluating after every epoch.
pub fn train_proposed(
    cfg: &RunConfig,
    data: &ExperimentData,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome, SnnError> {
    let mut net = build_network(&cfg.network, &cfg.bp, cfg.seed, 0)?;
    let mut rec = Recorder {
        cfg,
        test_sets: &data.test_sets,
        metrics: Vec::new(),
        sim_seconds: 0.0,
        started: Instant::now(),
        on_epoch,
    };
    let sch = &cfg.schedule;
    let mut bp_end = None;
    for e in 0..sch.bp_epochs {
        bp_epoch(&mut net, &data.labeled, &cfg.bp, sch.presentation_ms_train, cfg.seed, e as u64)?;
        rec.add_simulated(data.labeled.len(), sch.presentation_ms_train);
        if should_eval(e + 1, sch.bp_epochs, sch.eval_every) {
            bp_end = Some(rec.record(&net, Phase::Bp)?);
        }
    }

    let unlabeled: Vec<&RateMap> = data.unlabeled.iter().map(|s| &s.rates).collect();
    let mut stdp_acc = Vec::new();
    let mut stopped_at = None;
    for e in 0..sch.stdp_epochs {
        stdp_epoch(
            &mut net,
            &unlabeled,
            &cfg.stdp,
            cfg.bp.rho,
            cfg.bp.regularization,
            sch.presentation_ms_train,
            cfg.seed,
            e as u64,
        )?;
        rec.add_simulated(unlabeled.len(), sch.presentation_ms_train);
        if should_eval(e + 1, sch.stdp_epochs, sch.eval_every) {
            stdp_acc.push(rec.record(&net, Phase::Stdp)?);
            if let Some(base) = bp_end {
                if stdp_guard(&stdp_acc, base, &cfg.guard) == GuardDecision::Stop {
                    stopped_at = Some(e + 1);
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        metrics: rec.metrics,
        network: net,
        bp_end_accuracy: bp_end,
        stopped_at,
        rounds: Vec::new(),
    })
}

/// The proposed schedule with the STDP phase removed.
pub fn train_bp_only(
    cfg: &RunConfig,
    data: &ExperimentData,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome, SnnError> {
    let mut cfg = cfg.clone();
    cfg.schedule.stdp_epochs = 0;
    train_proposed(&cfg, data, on_epoch)
}

/// Ranks unlabeled samples by their strongest output count, highest first,
/// ties by lowest sample id. Returns `(position, predicted label)` for the
/// top `take`.
pub fn select_pseudo_labels(scores: &[(usize, u32, usize)], take: usize) -> Vec<(usize, usize)> {
    // (position, max count, predicted) with position doubling as the id order
    let mut ranked: Vec<&(usize, u32, usize)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(take).map(|&(p, _, l)| (p, l)).collect()
}

/// Self-training baseline. Each round trains `epochs_per_round` BP epochs on
/// the current pool, then pseudo-labels the `label_per_round` most confident
/// unlabeled samples and moves them into the pool. A final round trains on
/// the completed pool.
pub fn train_self_training(
    cfg: &RunConfig,
    data: &ExperimentData,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome, SnnError> {
    let st = &cfg.self_training;
    let sch = &cfg.schedule;
    let mut net = build_network(&cfg.network, &cfg.bp, cfg.seed, 0)?;
    let mut rec = Recorder {
        cfg,
        test_sets: &data.test_sets,
        metrics: Vec::new(),
        sim_seconds: 0.0,
        started: Instant::now(),
        on_epoch,
    };
    let mut pool: Vec<Sample> = data.labeled.clone();
    // Kept sorted by sample id so ties resolve by lowest id.
    let mut remaining: Vec<Sample> = data.unlabeled.clone();
    remaining.sort_by_key(|s| s.id);
    let total = pool.len() + remaining.len();
    let mut rounds = Vec::new();
    let mut round = 1;

    loop {
        if st.reinit_each_round && round > 1 {
            net = build_network(&cfg.network, &cfg.bp, cfg.seed, round as u64)?;
        }
        let first_epoch = rec.epoch_count() + 1;
        for e in 0..st.epochs_per_round {
            let global = rec.epoch_count() as u64;
            bp_epoch(&mut net, &pool, &cfg.bp, sch.presentation_ms_train, cfg.seed, global)?;
            rec.add_simulated(pool.len(), sch.presentation_ms_train);
            if should_eval(e + 1, st.epochs_per_round, sch.eval_every) {
                rec.record(&net, Phase::SelfTrain(round))?;
            }
        }
        let mut info = RoundInfo {
            round,
            first_epoch,
            pool_size: pool.len(),
            remaining_unlabeled: remaining.len(),
            pseudo_label_accuracy: None,
        };
        if remaining.is_empty() {
            rounds.push(info);
            break;
        }

        let mut scores = Vec::with_capacity(remaining.len());
        for (pos, s) in remaining.iter().enumerate() {
            let counts = output_counts(
                &mut net,
                &s.rates,
                sch.presentation_ms_test,
                cfg.seed,
                "label",
                round as u64,
                s.id as u64,
            )?;
            let best = argmax_lowest(&counts);
            scores.push((pos, counts.get(best).copied().unwrap_or(0), best));
        }
        rec.add_simulated(remaining.len(), sch.presentation_ms_test);

        let chosen = select_pseudo_labels(&scores, st.label_per_round);
        let mut take = vec![None; remaining.len()];
        for &(pos, label) in &chosen {
            take[pos] = Some(label);
        }
        let mut correct = 0usize;
        let mut kept = Vec::with_capacity(remaining.len() - chosen.len());
        for (s, pseudo) in remaining.into_iter().zip(take) {
            match pseudo {
                Some(label) => {
                    correct += usize::from(label == s.label);
                    pool.push(Sample { label, ..s });
                }
                None => kept.push(s),
            }
        }
        remaining = kept;
        debug_assert_eq!(pool.len() + remaining.len(), total);
        info.pseudo_label_accuracy = Some(correct as f64 / chosen.len().max(1) as f64);
        rounds.push(info);
        round += 1;
    }
    Ok(TrainOutcome {
        metrics: rec.metrics,
        network: net,
        bp_end_accuracy: None,
        stopped_at: None,
        rounds,
    })
}
