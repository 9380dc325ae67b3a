//! Helpers shared by the integration tests.
#![allow(dead_code)]

use geomrazor::{Activation, Layer, Matrix, Mlp, Vector};
use rand::Rng;

/// Dense network with `U(±sqrt(3/fan_in))` weights and `U(±bias_scale)`
/// biases. The last layer is linear.
pub fn random_mlp<R: Rng>(rng: &mut R, sizes: &[usize], hidden: Activation, bias_scale: f64) -> Mlp {
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (3.0 / fan_in as f64).sqrt();
            let weight = Matrix::new(fan_out, fan_in, (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect()).unwrap();
            let bias = if bias_scale > 0.0 {
                Vector::new((0..fan_out).map(|_| rng.random_range(-bias_scale..bias_scale)).collect()).unwrap()
            } else {
                Vector::zeros(fan_out)
            };
            let act = if i + 2 == sizes.len() { Activation::Identity } else { hidden };
            Layer::new(weight, bias, act).unwrap()
        })
        .collect();
    Mlp::new(sizes[0], layers).unwrap()
}

/// Layer sizes `[d, widths.., k]` with random widths in `1..=max_width`
/// and `1..=max_hidden` hidden layers.
pub fn random_sizes<R: Rng>(rng: &mut R, max_in: usize, max_width: usize, max_hidden: usize, max_out: usize) -> Vec<usize> {
    let mut sizes = vec![rng.random_range(1..=max_in)];
    for _ in 0..rng.random_range(1..=max_hidden) {
        sizes.push(rng.random_range(1..=max_width));
    }
    sizes.push(rng.random_range(1..=max_out));
    sizes
}

pub fn random_vector<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vector {
    Vector::new((0..dim).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Largest singular value by one-sided Jacobi rotations.
pub fn jacobi_max_singular_value(m: &Matrix) -> f64 {
    let (rows, cols) = (m.rows(), m.cols());
    let mut a: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| m.get(i, j)).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a[p].iter().map(|v| v * v).sum();
                let beta: f64 = a[q].iter().map(|v| v * v).sum();
                let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = c * x - s * y;
                    a[q][i] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    a.iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}
