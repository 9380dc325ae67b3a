mod common;

use common::{jacobi_max_singular_value, rel_err};
use geomrazor::linalg::{frobenius_norm_sq, spectral_norm};
use geomrazor::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;
const MAX_ITER: usize = 1_000_000;

fn random_matrix(rng: &mut ChaCha8Rng, max_dim: usize) -> Matrix {
    let rows = rng.random_range(1..=max_dim);
    let cols = rng.random_range(1..=max_dim);
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn jacobi_oracle_on_known_matrices() {
    let m = Matrix::from_rows(&[vec![3.0, 0.0], vec![4.0, 5.0]]).unwrap();
    // singular values of [[3,0],[4,5]] are 3·sqrt(5) and sqrt(5)
    assert!(rel_err(jacobi_max_singular_value(&m), 45f64.sqrt()) < 1e-14);
    assert!(rel_err(jacobi_max_singular_value(&Matrix::diag(&[1.0, -7.0, 2.0])), 7.0) < 1e-15);
}

#[test]
fn seeded_5x4_matches_svd_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let m = Matrix::new(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let s = spectral_norm(&m, TOL, MAX_ITER).unwrap();
    assert!(rel_err(s, jacobi_max_singular_value(&m)) < 1e-8);
}

#[test]
fn agrees_with_svd_oracle_on_1000_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let m = random_matrix(&mut rng, 32);
        let s = spectral_norm(&m, TOL, MAX_ITER).unwrap();
        let oracle = jacobi_max_singular_value(&m);
        let e = rel_err(s, oracle);
        worst = worst.max(e);
        assert!(e < 1e-8, "matrix {i} ({}x{}): {s} vs {oracle}", m.rows(), m.cols());
    }
    eprintln!("worst relative disagreement {worst:.2e}");
}

fn matrix_strategy() -> impl Strategy<Value = Matrix> {
    (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c).prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

proptest! {
    #[test]
    fn spectral_norm_is_at_most_frobenius(m in matrix_strategy()) {
        let s = spectral_norm(&m, TOL, MAX_ITER).unwrap();
        let f = frobenius_norm_sq(&m).sqrt();
        prop_assert!(s <= f * (1.0 + 1e-12), "{s} > {f}");
        // and at least the largest column norm
        let col_max = (0..m.cols())
            .map(|j| (0..m.rows()).map(|i| m.get(i, j).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        prop_assert!(s >= col_max * (1.0 - 1e-10));
    }

    #[test]
    fn spectral_norm_is_absolutely_homogeneous(m in matrix_strategy(), c in -100.0f64..100.0) {
        let s = spectral_norm(&m, TOL, MAX_ITER).unwrap();
        let sc = spectral_norm(&m.scaled(c), TOL, MAX_ITER).unwrap();
        prop_assert!((sc - c.abs() * s).abs() <= 1e-10 * (c.abs() * s).max(1e-300), "{sc} vs {}", c.abs() * s);
    }

    #[test]
    fn frobenius_matches_entry_sum(m in matrix_strategy()) {
        let direct: f64 = m.data().iter().map(|v| v * v).sum();
        prop_assert!(rel_err(frobenius_norm_sq(&m), direct) < 1e-13);
    }

    #[test]
    fn transpose_preserves_norms(m in matrix_strategy()) {
        let t = m.transpose();
        prop_assert!(rel_err(spectral_norm(&m, TOL, MAX_ITER).unwrap(), spectral_norm(&t, TOL, MAX_ITER).unwrap()) < 1e-10);
        prop_assert!(rel_err(frobenius_norm_sq(&m), frobenius_norm_sq(&t)) < 1e-14);
    }
}
