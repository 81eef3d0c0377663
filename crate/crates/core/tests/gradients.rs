//! Analytic rate-model derivatives against central finite differences of the
//! fixed-point solve, and the closed-form input Jacobian against the
//! matrix-inverse form.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikeprop_core::backprop::{
    input_jacobian_matrix, input_jacobian_uniform, rate_partials, solve_rates_general, total_derivative,
    uniform_kappa,
};
use spikeprop_core::snn::LayerParams;

const STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;
/// Coordinates whose activity is this close to zero sit at the clamp and are skipped.
const CLAMP_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
struct Instance {
    x: Vec<f64>,
    w: DMatrix<f64>,
    v: Vec<f64>,
    sigma: f64,
    kappa: DMatrix<f64>,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng, uniform: bool) -> Self {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=8);
        let x = (0..m).map(|_| rng.random_range(0.0..3.0)).collect();
        let w = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let v = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        let sigma: f64 = rng.random_range(0.0..1.0);
        // Keep the coupling away from singularity: |σκ| summed per row < 0.9.
        let bound = 0.9 / (n as f64).max(1.0);
        let kappa = if uniform {
            uniform_kappa(n, -rng.random_range(0.0..1.0f64).min(bound / sigma.max(1e-9)))
        } else {
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    0.0
                } else {
                    -rng.random_range(0.0..1.0f64).min(bound / sigma.max(1e-9))
                }
            })
        };
        Self { x, w, v, sigma, kappa }
    }

    fn solve(&self) -> Vec<f64> {
        solve_rates_general(&self.x, &self.w, &self.v, self.sigma, &self.kappa).unwrap()
    }
}

fn central<F: Fn(f64) -> Vec<f64>>(f: F, at: f64) -> Vec<f64> {
    let hi = f(at + STEP);
    let lo = f(at - STEP);
    hi.iter().zip(&lo).map(|(h, l)| (h - l) / (2.0 * STEP)).collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], a: &[f64], what: &str) {
    for i in 0..analytic.len() {
        if a[i] <= CLAMP_MARGIN {
            continue;
        }
        let scale = analytic[i].abs().max(numeric[i].abs()).max(1e-3);
        let rel = (analytic[i] - numeric[i]).abs() / scale;
        assert!(
            rel <= REL_TOL,
            "{what}[{i}]: analytic {} vs fd {} (rel {rel:e})",
            analytic[i],
            numeric[i]
        );
    }
}

fn unit(n: usize, i: usize, value: f64) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = value;
    e
}

fn check_instance(inst: &Instance) {
    let n = inst.v.len();
    let m = inst.x.len();
    let a = inst.solve();
    let p = rate_partials(&inst.x, &a, &inst.v, inst.sigma, &inst.kappa);

    for k in 0..m {
        let analytic = input_jacobian_matrix(&inst.w, &inst.v, inst.sigma, &inst.kappa, k).unwrap();
        let numeric = central(
            |xk| {
                let mut t = inst.clone();
                t.x[k] = xk;
                t.solve()
            },
            inst.x[k],
        );
        assert_close(&analytic, &numeric, &a, &format!("da/dx{k}"));
    }

    for i in 0..n {
        for k in 0..m {
            let analytic = total_derivative(inst.sigma, &inst.kappa, &unit(n, i, p.d_w[(i, k)])).unwrap();
            let numeric = central(
                |wik| {
                    let mut t = inst.clone();
                    t.w[(i, k)] = wik;
                    t.solve()
                },
                inst.w[(i, k)],
            );
            assert_close(&analytic, &numeric, &a, &format!("da/dw{i}{k}"));
        }

        let analytic = total_derivative(inst.sigma, &inst.kappa, &unit(n, i, p.d_vth[i])).unwrap();
        let numeric = central(
            |vi| {
                let mut t = inst.clone();
                t.v[i] = vi;
                t.solve()
            },
            inst.v[i],
        );
        assert_close(&analytic, &numeric, &a, &format!("da/dv{i}"));

        for h in 0..n {
            if h == i {
                continue;
            }
            let analytic = total_derivative(inst.sigma, &inst.kappa, &unit(n, i, p.d_kappa[(i, h)])).unwrap();
            let numeric = central(
                |kih| {
                    let mut t = inst.clone();
                    t.kappa[(i, h)] = kih;
                    t.solve()
                },
                inst.kappa[(i, h)],
            );
            assert_close(&analytic, &numeric, &a, &format!("da/dkappa{i}{h}"));
        }
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for case in 0..150 {
        let inst = Instance::random(&mut rng, case % 2 == 0);
        check_instance(&inst);
    }
}

fn uniform_layer(rng: &mut ChaCha8Rng) -> LayerParams {
    let n = rng.random_range(1..=6);
    let m = rng.random_range(1..=8);
    let w = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let v = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    let mu: f64 = -rng.random_range(0.0..1.0);
    let sigma = rng.random_range(0.0..1.0);
    LayerParams::new(w, v, mu, sigma, 20.0).unwrap()
}

#[test]
fn closed_form_equals_matrix_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    while checked < 100 {
        let layer = uniform_layer(&mut rng);
        let n = layer.n_out();
        let ms = layer.mu * layer.sigma;
        if (1.0 - ms * (n as f64 - 1.0)).abs() < 1e-3 || (1.0 + ms).abs() < 1e-3 {
            continue;
        }
        let kappa = uniform_kappa(n, layer.mu);
        for k in 0..layer.n_in() {
            let closed = input_jacobian_uniform(&layer, k).unwrap();
            let matrix = input_jacobian_matrix(&layer.weights, &layer.thresholds, layer.sigma, &kappa, k).unwrap();
            for (c, m) in closed.iter().zip(&matrix) {
                assert!((c - m).abs() <= 1e-10 * m.abs().max(1.0), "closed {c} vs matrix {m}");
            }
        }
        checked += 1;
    }
}

#[test]
fn two_neuron_jacobian_by_finite_differences() {
    let layer = LayerParams::new(DMatrix::identity(2, 2), vec![1.0, 1.0], -1.0, 0.5, 20.0).unwrap();
    let j = input_jacobian_uniform(&layer, 0).unwrap();
    assert!((j[0] - 4.0 / 3.0).abs() < 1e-12);
    assert!((j[1] + 2.0 / 3.0).abs() < 1e-12);
    let solve = |x0: f64| {
        solve_rates_general(&[x0, 0.0], &layer.weights, &layer.thresholds, 0.5, &uniform_kappa(2, -1.0)).unwrap()
    };
    let fd = central(solve, 1.0);
    assert!((fd[0] - j[0]).abs() < 1e-6);
    assert!((fd[1] - j[1]).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobian_is_linear_in_weights(seed in any::<u64>(), c in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = uniform_layer(&mut rng);
        let n = layer.n_out();
        let ms = layer.mu * layer.sigma;
        prop_assume!((1.0 - ms * (n as f64 - 1.0)).abs() > 1e-3);
        let mut scaled = layer.clone();
        scaled.weights *= c;
        let j = input_jacobian_uniform(&layer, 0).unwrap();
        let js = input_jacobian_uniform(&scaled, 0).unwrap();
        for (a, b) in j.iter().zip(&js) {
            prop_assert!((a * c - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn decoupled_solve_is_division(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = Instance::random(&mut rng, true);
        let a = solve_rates_general(&inst.x, &inst.w, &inst.v, 0.0, &inst.kappa).unwrap();
        let s = &inst.w * nalgebra::DVector::from_column_slice(&inst.x);
        for i in 0..a.len() {
            prop_assert!((a[i] - s[i] / inst.v[i]).abs() <= 1e-12 * (1.0 + a[i].abs()));
        }
    }
}
