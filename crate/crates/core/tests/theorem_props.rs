mod common;

use common::{jacobi_max_singular_value, random_mlp, random_vector, rel_err};
use geomrazor::network::{fd_input_jacobian, parameter_gradients, subnetwork_value};
use geomrazor::theorem::{
    bias_lemma_check, check_theorem, layer_diagnostics, loglog_slope, perturbation_residuals, pythagoras_check,
    weight_lemma_check, TheoremChecker, DEFAULT_EPS,
};
use geomrazor::{Activation, Matrix, Mlp, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference Jacobian of `h_i` (the input to layer `i`).
fn fd_subnetwork_jacobian(mlp: &Mlp, x: &Vector, i: usize, h: f64) -> Matrix {
    if i == 0 {
        return Matrix::identity(x.dim());
    }
    let head = Mlp::new(mlp.input_dim(), mlp.layers()[..i].to_vec()).unwrap();
    fd_input_jacobian(&head, x, h).unwrap()
}

#[test]
fn a_i_matches_fd_jacobian_and_svd_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mlp = random_mlp(&mut rng, &[3, 10, 8, 6, 1], Activation::Tanh, 0.5);
    let x = random_vector(&mut rng, 3, 1.0);
    let trace = mlp.forward(&x).unwrap();
    for i in 0..mlp.depth() {
        let d = layer_diagnostics(&mlp, &trace, i, 0, DEFAULT_EPS).unwrap();
        let w = jacobi_max_singular_value(&mlp.layers()[i].weight);
        let hp = jacobi_max_singular_value(&fd_subnetwork_jacobian(&mlp, &x, i, 1e-5));
        assert!(rel_err(d.a_i, w * hp) < 1e-5, "layer {i}: {} vs {}", d.a_i, w * hp);
        let h = subnetwork_value(&trace, i).unwrap();
        assert!(rel_err(d.h_norm_sq, h.norm_sq()) < 1e-15);
    }
}

#[test]
fn lemma_sums_reproduce_the_verdict() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let mlp = random_mlp(&mut rng, &[2, 16, 16, 3], Activation::Sigmoid, 0.5);
        let x = random_vector(&mut rng, 2, 2.0);
        let trace = mlp.forward(&x).unwrap();
        let k = rng.random_range(0..3);
        let v = check_theorem(&mlp, &x, k, DEFAULT_EPS).unwrap();
        assert!(v.skipped_layers.is_empty());
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for i in 0..mlp.depth() {
            let w = weight_lemma_check(&mlp, &trace, i, k).unwrap();
            let b = bias_lemma_check(&mlp, &trace, i, k).unwrap();
            assert!(w.holds(1e-9 * w.rhs.max(1e-300)) && b.holds(1e-9 * b.rhs.max(1e-300)));
            lhs += b.lhs + w.lhs;
            rhs += b.rhs + w.rhs;
        }
        assert!(rel_err(lhs, v.lhs) < 1e-14);
        assert!(rel_err(rhs, v.rhs) < 1e-14);
        let (total, parts) = pythagoras_check(&parameter_gradients(&mlp, &trace, k).unwrap());
        assert!(rel_err(total, parts) < 1e-12);
        assert!(rel_err(parts, v.rhs) < 1e-14);
        // lhs is ‖∇_x f‖² times Σ (1 + ‖h_i‖²) / a_i²
        let factor: f64 = v.per_layer.iter().map(|d| (1.0 + d.h_norm_sq) / (d.a_i * d.a_i)).sum();
        assert!(rel_err(v.lhs, v.input_grad_norm_sq * factor) < 1e-13);
    }
}

#[test]
fn perturbation_residuals_are_second_order_on_smooth_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let act = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Sigmoid };
        let mlp = random_mlp(&mut rng, &[3, 12, 12, 12, 2], act, 0.5);
        let x = random_vector(&mut rng, 3, 1.0);
        let dir = random_vector(&mut rng, 3, 0.1);
        for layer in 1..mlp.depth() {
            let res = perturbation_residuals(&mlp, &x, layer, &dir, 6).unwrap();
            let n: Vec<f64> = res.iter().map(|r| r.delta_norm).collect();
            let w: Vec<f64> = res.iter().map(|r| r.weight).collect();
            let b: Vec<f64> = res.iter().map(|r| r.bias).collect();
            let (sw, sb) = (loglog_slope(&n, &w), loglog_slope(&n, &b));
            assert!((1.8..=2.2).contains(&sw), "layer {layer} weight slope {sw}");
            assert!((1.8..=2.2).contains(&sb), "layer {layer} bias slope {sb}");
        }
        // the first layer sees the input directly, so both constructions are exact
        for r in perturbation_residuals(&mlp, &x, 0, &dir, 3).unwrap() {
            assert!(r.weight < 1e-12 && r.bias < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn inequality_holds_on_random_smooth_networks(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = [4, 16, 64][rng.random_range(0..3)];
        let depth = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let mut sizes = vec![d];
        sizes.extend(std::iter::repeat_n(width, depth - 1));
        sizes.push(1);
        let act = if rng.random_bool(0.5) { Activation::Tanh } else { Activation::Sigmoid };
        let mlp = random_mlp(&mut rng, &sizes, act, 0.5);
        let x = random_vector(&mut rng, d, 2.0);
        let v = check_theorem(&mlp, &x, 0, DEFAULT_EPS).unwrap();
        prop_assert!(v.holds(1e-9), "lhs {} rhs {}", v.lhs, v.rhs);
        if depth == 1 {
            prop_assert!(v.slack.abs() < 1e-10 * v.rhs.max(1.0), "slack {}", v.slack);
        }
    }

    #[test]
    fn inequality_holds_for_relu_away_from_kinks(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = random_mlp(&mut rng, &[2, 16, 16, 2], Activation::Relu, 0.5);
        let checker = TheoremChecker::new(&mlp, DEFAULT_EPS).unwrap();
        let x = random_vector(&mut rng, 2, 2.0);
        let trace = mlp.forward(&x).unwrap();
        prop_assume!(trace.min_abs_pre_activation() > 1e-3);
        for k in 0..2 {
            let v = checker.check_trace(&trace, k).unwrap();
            prop_assert!(v.holds(1e-9));
        }
    }
}
