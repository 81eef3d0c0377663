use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikeprop_core::backprop::{
    accumulate_trace, init_layer, layer_activities, regularize_thresholds, InitDistribution, RegularizationMode,
    TraceVector,
};
use spikeprop_core::encoding::{convolve, poisson_encode, Image, RateMap, ReceptiveFieldKernel};
use spikeprop_core::mnist::{build_splits, SplitSpec};
use spikeprop_core::pipeline::{argmax_lowest, evaluate};
use spikeprop_core::seed::derive_seed;
use spikeprop_core::snn::{LayerParams, Network, SpikeRecord, Time};
use spikeprop_core::stdp::{apply_stdp, stdp_delta, StdpConfig};

fn random_record(rng: &mut ChaCha8Rng, size: usize, duration: Time, p: f64) -> SpikeRecord {
    let mut events = Vec::new();
    for t in 1..=duration {
        for n in 0..size {
            if rng.random::<f64>() < p {
                events.push((t, n));
            }
        }
    }
    SpikeRecord::from_events(size, events).unwrap()
}

fn random_network(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Network {
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (weights, th) = init_layer(w[1], w[0], 2.0, InitDistribution::Uniform, rng);
            LayerParams::new(weights * 3.0, th, -rng.random_range(0.0..1.0), 0.5, 20.0).unwrap()
        })
        .collect();
    Network::new(sizes[0], layers, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn classic_regularization_conserves_sum(
        th in prop::collection::vec(0.5f64..2.0, 1..400),
        mask_seed in any::<u64>(),
        rho in 0.0f64..1e-4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let fired: Vec<usize> = (0..th.len()).filter(|_| rng.random::<f64>() < 0.2).collect();
        let mut after = th.clone();
        regularize_thresholds(&mut after, &fired, rho, RegularizationMode::Classic);
        let before: f64 = th.iter().sum();
        let now: f64 = after.iter().sum();
        prop_assert!((now - before).abs() <= 1e-12 * before);
    }

    #[test]
    fn modified_regularization_shifts_by_nw_squared(
        th in prop::collection::vec(0.5f64..2.0, 1..400),
        mask_seed in any::<u64>(),
        rho in 0.0f64..1e-4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let fired: Vec<usize> = (0..th.len()).filter(|_| rng.random::<f64>() < 0.2).collect();
        let mut after = th.clone();
        regularize_thresholds(&mut after, &fired, rho, RegularizationMode::Modified);
        let shift: f64 = after.iter().zip(&th).map(|(a, b)| a - b).sum();
        let nw = fired.len() as f64;
        prop_assert!((shift - rho * nw * nw).abs() <= 1e-12 * th.iter().sum::<f64>());
    }

    #[test]
    fn thresholds_stay_positive(
        th in prop::collection::vec(1e-6f64..1e-3, 1..50),
        rho in 0.0f64..1.0,
    ) {
        let fired = vec![0];
        let mut after = th.clone();
        regularize_thresholds(&mut after, &fired, rho, RegularizationMode::Classic);
        prop_assert!(after.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn stdp_matches_pairwise_brute_force(seed in any::<u64>(), n_pre in 1usize..12, n_post in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pre = random_record(&mut rng, n_pre, 60, 0.08);
        let post = random_record(&mut rng, n_post, 60, 0.05);
        let cfg = StdpConfig::default();
        let w0 = DMatrix::from_fn(n_post, n_pre, |_, _| rng.random_range(-0.1..0.1));
        let mut w = w0.clone();
        apply_stdp(&pre, &post, &mut w, &cfg).unwrap();

        let mut expected = w0.clone();
        for &(tp, j) in pre.events() {
            for &(tq, i) in post.events() {
                let ds = i64::from(tp) - i64::from(tq);
                expected[(i, j)] += cfg.learning_rate * stdp_delta(ds, &cfg);
            }
        }
        for (a, b) in w.iter().zip(expected.iter()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn stdp_is_additive_over_post_records(seed in any::<u64>()) {
        // Splitting the post-synaptic spikes into two records and applying
        // both gives the same weights as applying the union once.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pre = random_record(&mut rng, 8, 50, 0.1);
        let post = random_record(&mut rng, 3, 50, 0.1);
        let (first, second): (Vec<_>, Vec<_>) = post.events().iter().partition(|e| e.0 <= 25);
        let cfg = StdpConfig::default();
        let mut once = DMatrix::zeros(3, 8);
        apply_stdp(&pre, &post, &mut once, &cfg).unwrap();
        let mut twice = DMatrix::zeros(3, 8);
        apply_stdp(&pre, &SpikeRecord::from_events(3, first).unwrap(), &mut twice, &cfg).unwrap();
        apply_stdp(&pre, &SpikeRecord::from_events(3, second).unwrap(), &mut twice, &cfg).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn traces_chain_between_layers(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = random_network(&mut rng, &[20, 8, 4]);
        let input = random_record(&mut rng, 20, 50, 0.15);
        let records = net.run(&input, 50).unwrap();
        let act = layer_activities(&input, &records, 50, 20.0);
        prop_assert_eq!(&act[0].a, &act[1].x);
        prop_assert_eq!(&act[0].active_neurons, &act[1].active_inputs);
        for (l, record) in records.iter().enumerate() {
            let direct = TraceVector::from_record(record, 50, 20.0);
            prop_assert_eq!(&act[l].a, &direct.values);
        }
    }

    #[test]
    fn incremental_trace_matches_direct_sum(seed in any::<u64>(), t in 1u32..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let record = random_record(&mut rng, 5, 200, 0.05);
        let trace = TraceVector::from_record(&record, t, 20.0);
        for (n, times) in record.times_by_neuron().iter().enumerate() {
            let direct = accumulate_trace(times, t, 20.0);
            prop_assert!((trace.values[n] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn one_spike_per_neuron_per_step(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = random_network(&mut rng, &[30, 10, 5]);
        let input = random_record(&mut rng, 30, 80, 0.3);
        // from_events would reject duplicates; re-check explicitly.
        for record in net.run(&input, 80).unwrap() {
            let ev = record.events();
            prop_assert!(ev.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn convolution_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = |_: ()| Image {
            height: 9,
            width: 7,
            pixels: (0..63).map(|_| rng.random::<f64>()).collect(),
        };
        let (p, q) = (img(()), img(()));
        let k = ReceptiveFieldKernel::on_center();
        let mix = Image {
            height: 9,
            width: 7,
            pixels: p.pixels.iter().zip(&q.pixels).map(|(x, y)| a * x + b * y).collect(),
        };
        let lhs = convolve(&mix, &k);
        let (cp, cq) = (convolve(&p, &k), convolve(&q, &k));
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * cp[i] + b * cq[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn splits_are_disjoint_and_balanced(seed in any::<u64>()) {
        let labels: Vec<u8> = (0..700u32).map(|i| (i % 10) as u8).collect();
        let spec = SplitSpec { labeled_per_class: 5, unlabeled_per_class: 30, test_sets: 3, test_per_class: 2 };
        let s = build_splits(&labels, &spec, seed).unwrap();
        prop_assert!(s.is_disjoint());
        prop_assert_eq!(s.labeled.len(), 50);
        prop_assert_eq!(s.unlabeled.len(), 300);
        for set in &s.test_sets {
            let mut per_class = [0; 10];
            for &i in set {
                per_class[usize::from(labels[i])] += 1;
            }
            prop_assert!(per_class.iter().all(|&c| c == 2));
        }
    }

    #[test]
    fn argmax_invariant_under_scaling(counts in prop::collection::vec(0u32..50, 10), c in 1u32..20) {
        let scaled: Vec<u32> = counts.iter().map(|v| v * c).collect();
        prop_assert_eq!(argmax_lowest(&counts), argmax_lowest(&scaled));
    }

    #[test]
    fn derived_seeds_differ_by_component(m in any::<u64>(), e in 0u64..1000, i in 0u64..1000) {
        let base = derive_seed(m, "bp-encode", e, i);
        prop_assert_ne!(base, derive_seed(m, "stdp-encode", e, i));
        prop_assert_ne!(base, derive_seed(m, "bp-encode", e + 1, i));
        prop_assert_ne!(base, derive_seed(m, "bp-encode", e, i + 1));
        prop_assert_ne!(base, derive_seed(m.wrapping_add(1), "bp-encode", e, i));
    }
}

#[test]
fn stdp_kernel_closed_forms() {
    let cfg = StdpConfig::default();
    for ds in -20i64..=-1 {
        assert_eq!(stdp_delta(ds, &cfg), 0.6 * (ds as f64 / 8.0).exp());
    }
    for ds in 1i64..=20 {
        assert_eq!(stdp_delta(ds, &cfg), -0.3 * (-(ds as f64) / 5.0).exp());
    }
    for ds in [0, 21, -21, 100, -100] {
        assert_eq!(stdp_delta(ds, &cfg), 0.0);
    }
}

#[test]
fn init_matches_unit_expected_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for m in [10usize, 300, 784] {
        let mean: f64 = (0..1000)
            .map(|_| {
                let (w, _) = init_layer(1, m, 2.0, InitDistribution::Uniform, &mut rng);
                w.iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mean - 1.0).abs() < 0.1, "M = {m}: E[sum w^2] = {mean}");
    }
}

#[test]
fn evaluation_leaves_network_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = random_network(&mut rng, &[16, 6, 10]);
    let before: Vec<LayerParams> = net.params().into_iter().cloned().collect();
    let sets: Vec<Vec<_>> = (0..2)
        .map(|s| {
            (0..10)
                .map(|i| spikeprop_core::encoding::Sample {
                    id: s * 10 + i,
                    label: i,
                    rates: RateMap {
                        rates: (0..16).map(|_| rng.random_range(0.0..150.0)).collect(),
                    },
                })
                .collect()
        })
        .collect();
    let first = evaluate(&net, &sets, 150, 9).unwrap();
    let second = evaluate(&net, &sets, 150, 9).unwrap();
    let after: Vec<LayerParams> = net.params().into_iter().cloned().collect();
    assert_eq!(before, after);
    assert_eq!(first, second);
}

#[test]
fn poisson_input_is_sorted_and_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rates = RateMap {
        rates: (0..784).map(|i| (i % 151) as f64).collect(),
    };
    let rec = poisson_encode(&rates, 50, &mut rng);
    assert!(rec.events().windows(2).all(|p| p[0] < p[1]));
    assert!(rec.events().iter().all(|&(t, n)| (1..=50).contains(&t) && n < 784));
}
