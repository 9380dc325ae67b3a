//! Numerical checks of the inequality relating input gradients to parameter
//! gradients of a feed-forward network:
//!
//! ```text
//! ‖∇_x f‖² · Σ_i (1 + ‖h_i(x)‖²) / (‖w_i‖² ‖h_i′(x)‖²)  ≤  ‖∇_θ f‖²
//! ```
//!
//! where `‖w_i‖` is the spectral norm and `‖h_i′(x)‖` the operator norm of
//! the sub-network Jacobian. Each layer contributes one weight bound and one
//! bias bound; their sum against the layer-wise split of `‖∇_θ f‖²` gives
//! the full inequality.
//!
//! All quantities refer to a single scalar output component.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{axpy, LinalgError, Matrix, Vector};
use crate::network::{
    parameter_gradients, subnetwork_input_jacobians, ForwardTrace, JacobianBundle, Mlp, NetworkError,
};

pub const DEFAULT_EPS: f64 = 1e-9;
/// Relative eigen-residual for the spectral norms used here. Power
/// iteration approaches the top singular value from below, which inflates
/// the left-hand side, so this has to sit well under the 1e-9 slack budget.
pub const SPECTRAL_TOL: f64 = 1e-13;
pub const SPECTRAL_MAX_ITER: usize = 200_000;

#[derive(Debug, Error)]
pub enum TheoremError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("layer {layer} is degenerate: {reason}")]
    Degenerate { layer: usize, reason: String },
    #[error("δx has dimension {got}, network input has {expected}")]
    PerturbationDim { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerDiagnostics {
    pub layer_index: usize,
    /// `‖w_i‖`, spectral norm
    pub w_spectral: f64,
    /// `‖h_i(x)‖²`
    pub h_norm_sq: f64,
    pub hprime_opnorm: f64,
    pub hprime_fronorm: f64,
    /// `‖w_i‖ · ‖h_i′(x)‖_op`
    pub a_i: f64,
    /// `‖∇_x f‖² ‖h_i‖² / (‖w_i‖ ‖h_i′‖)²`; `None` when degenerate.
    pub weight_term: Option<f64>,
    /// `‖∇_x f‖² / (‖w_i‖ ‖h_i′‖)²`; `None` when degenerate.
    pub bias_term: Option<f64>,
    /// `‖∇_{w_i} f‖²_F`
    pub weight_grad_norm_sq: f64,
    /// `‖∇_{b_i} f‖²`
    pub bias_grad_norm_sq: f64,
}

impl LayerDiagnostics {
    pub fn is_degenerate(&self) -> bool {
        self.bias_term.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedLayer {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremVerdict {
    pub output_index: usize,
    pub input_grad_norm_sq: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`
    pub slack: f64,
    pub per_layer: Vec<LayerDiagnostics>,
    pub skipped_layers: Vec<SkippedLayer>,
    /// Every layer was degenerate, so `lhs` is an empty sum.
    pub all_degenerate: bool,
}

impl TheoremVerdict {
    /// `lhs ≤ rhs · (1 + rel_tol)`
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.lhs <= self.rhs + rel_tol * self.rhs
    }
}

/// Lemma-level comparison `lhs ≤ rhs` for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl LemmaCheck {
    pub fn holds(&self, abs_tol: f64) -> bool {
        self.lhs <= self.rhs + abs_tol
    }
}

/// Caches the input-independent spectral norms of a network's weights so
/// that many inputs can be checked cheaply.
#[derive(Debug, Clone)]
pub struct TheoremChecker<'a> {
    mlp: &'a Mlp,
    weight_norms: Vec<f64>,
    eps: f64,
}

impl<'a> TheoremChecker<'a> {
    pub fn new(mlp: &'a Mlp, eps: f64) -> Result<Self, TheoremError> {
        let weight_norms = mlp
            .layers()
            .iter()
            .map(|l| l.weight.spectral_norm(SPECTRAL_TOL, SPECTRAL_MAX_ITER))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            mlp,
            weight_norms,
            eps,
        })
    }

    pub fn weight_norms(&self) -> &[f64] {
        &self.weight_norms
    }

    /// Diagnostics of every layer at the traced input, for one output.
    pub fn diagnostics(
        &self,
        trace: &ForwardTrace,
        output_index: usize,
    ) -> Result<(Vec<LayerDiagnostics>, JacobianBundle), TheoremError> {
        let bundle = parameter_gradients(self.mlp, trace, output_index)?;
        let gx = bundle.input_jacobian.frobenius_norm_sq();
        let jacobians = subnetwork_input_jacobians(self.mlp, trace)?;
        let mut out = Vec::with_capacity(self.mlp.depth());
        for (i, hprime) in jacobians.iter().enumerate() {
            let h_norm_sq = if i == 0 {
                trace.input.norm_sq()
            } else {
                trace.activations[i - 1].norm_sq()
            };
            let hprime_opnorm = hprime.spectral_norm(SPECTRAL_TOL, SPECTRAL_MAX_ITER)?;
            let w_spectral = self.weight_norms[i];
            let a_i = w_spectral * hprime_opnorm;
            let denom_ok = a_i >= self.eps;
            let a_sq = a_i * a_i;
            let bias_term = denom_ok.then(|| gx / a_sq);
            let weight_term = (denom_ok && h_norm_sq >= self.eps * self.eps).then(|| gx * h_norm_sq / a_sq);
            out.push(LayerDiagnostics {
                layer_index: i,
                w_spectral,
                h_norm_sq,
                hprime_opnorm,
                hprime_fronorm: hprime.frobenius_norm_sq().sqrt(),
                a_i,
                weight_term,
                bias_term,
                weight_grad_norm_sq: bundle.weight_grads[i].frobenius_norm_sq(),
                bias_grad_norm_sq: bundle.bias_grads[i].norm_sq(),
            });
        }
        Ok((out, bundle))
    }

    pub fn check(&self, x: &Vector, output_index: usize) -> Result<TheoremVerdict, TheoremError> {
        let trace = self.mlp.forward(x)?;
        self.check_trace(&trace, output_index)
    }

    pub fn check_trace(&self, trace: &ForwardTrace, output_index: usize) -> Result<TheoremVerdict, TheoremError> {
        let (per_layer, bundle) = self.diagnostics(trace, output_index)?;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        let mut skipped_layers = Vec::new();
        for d in &per_layer {
            rhs += d.weight_grad_norm_sq + d.bias_grad_norm_sq;
            match d.bias_term {
                Some(b) => lhs += b + d.weight_term.unwrap_or(0.0),
                None => skipped_layers.push(SkippedLayer {
                    index: d.layer_index,
                    reason: format!(
                        "‖w_i‖·‖h_i′(x)‖ = {:.3e} is below eps = {:.1e}",
                        d.a_i, self.eps
                    ),
                }),
            }
        }
        Ok(TheoremVerdict {
            output_index,
            input_grad_norm_sq: bundle.input_jacobian.frobenius_norm_sq(),
            lhs,
            rhs,
            slack: rhs - lhs,
            all_degenerate: skipped_layers.len() == per_layer.len(),
            per_layer,
            skipped_layers,
        })
    }
}

pub fn layer_diagnostics(
    mlp: &Mlp,
    trace: &ForwardTrace,
    layer: usize,
    output_index: usize,
    eps: f64,
) -> Result<LayerDiagnostics, TheoremError> {
    mlp.layer(layer)?;
    let (mut all, _) = TheoremChecker::new(mlp, eps)?.diagnostics(trace, output_index)?;
    Ok(all.swap_remove(layer))
}

pub fn check_theorem(mlp: &Mlp, x: &Vector, output_index: usize, eps: f64) -> Result<TheoremVerdict, TheoremError> {
    TheoremChecker::new(mlp, eps)?.check(x, output_index)
}

fn degenerate_layer(d: &LayerDiagnostics, what: &str) -> TheoremError {
    TheoremError::Degenerate {
        layer: d.layer_index,
        reason: format!("{what} (‖w_i‖ = {:.3e}, ‖h_i′‖ = {:.3e}, ‖h_i‖² = {:.3e})", d.w_spectral, d.hprime_opnorm, d.h_norm_sq),
    }
}

/// `‖∇_x f‖² (‖h_i‖ / (‖w_i‖ ‖h_i′‖))²` against `‖∇_{w_i} f‖²_F`.
pub fn weight_lemma_check(
    mlp: &Mlp,
    trace: &ForwardTrace,
    layer: usize,
    output_index: usize,
) -> Result<LemmaCheck, TheoremError> {
    let d = layer_diagnostics(mlp, trace, layer, output_index, DEFAULT_EPS)?;
    if d.is_degenerate() {
        return Err(degenerate_layer(&d, "zero denominator"));
    }
    // a vanishing h_i makes the bound trivially 0 ≤ rhs
    Ok(LemmaCheck {
        lhs: d.weight_term.unwrap_or(0.0),
        rhs: d.weight_grad_norm_sq,
    })
}

/// `‖∇_x f‖² / (‖w_i‖ ‖h_i′‖)²` against `‖∇_{b_i} f‖²`.
pub fn bias_lemma_check(
    mlp: &Mlp,
    trace: &ForwardTrace,
    layer: usize,
    output_index: usize,
) -> Result<LemmaCheck, TheoremError> {
    let d = layer_diagnostics(mlp, trace, layer, output_index, DEFAULT_EPS)?;
    match d.bias_term {
        Some(lhs) => Ok(LemmaCheck {
            lhs,
            rhs: d.bias_grad_norm_sq,
        }),
        None => Err(degenerate_layer(&d, "zero denominator")),
    }
}

fn check_delta(mlp: &Mlp, delta_x: &Vector) -> Result<(), TheoremError> {
    if delta_x.dim() != mlp.input_dim() {
        return Err(TheoremError::PerturbationDim {
            expected: mlp.input_dim(),
            got: delta_x.dim(),
        });
    }
    Ok(())
}

/// `w_i h_i′(x) δx`: the pre-activation shift of layer `i` caused by `δx`.
fn pre_activation_shift(mlp: &Mlp, trace: &ForwardTrace, layer: usize, delta_x: &Vector) -> Result<Vec<f64>, TheoremError> {
    check_delta(mlp, delta_x)?;
    let w = &mlp.layer(layer)?.weight;
    let hprime = &subnetwork_input_jacobians(mlp, trace)?[layer];
    let dh = hprime.matvec(delta_x.as_slice())?;
    Ok(w.matvec(&dh)?)
}

/// Rank-one weight change `(w_i h_i′(x) δx) h_iᵀ(x) / ‖h_i(x)‖²` that mimics
/// moving the input by `δx`, to first order.
pub fn weight_perturbation(
    mlp: &Mlp,
    trace: &ForwardTrace,
    layer: usize,
    delta_x: &Vector,
) -> Result<Matrix, TheoremError> {
    let shift = pre_activation_shift(mlp, trace, layer, delta_x)?;
    let h = if layer == 0 {
        &trace.input
    } else {
        &trace.activations[layer - 1]
    };
    let h_sq = h.norm_sq();
    if h_sq < DEFAULT_EPS * DEFAULT_EPS {
        return Err(TheoremError::Degenerate {
            layer,
            reason: format!("‖h_i(x)‖² = {h_sq:.3e} vanishes"),
        });
    }
    let cols = h.dim();
    let mut data = vec![0.0; shift.len() * cols];
    for (row, s) in data.chunks_exact_mut(cols).zip(&shift) {
        axpy(s / h_sq, h.as_slice(), row);
    }
    Ok(Matrix::new(shift.len(), cols, data)?)
}

/// Bias change `w_i h_i′(x) δx` that mimics moving the input by `δx`.
pub fn bias_perturbation(
    mlp: &Mlp,
    trace: &ForwardTrace,
    layer: usize,
    delta_x: &Vector,
) -> Result<Vector, TheoremError> {
    Ok(Vector::new(pre_activation_shift(mlp, trace, layer, delta_x)?)?)
}

/// `(‖flattened ∇_θ f‖², Σ_i ‖∇_{w_i} f‖² + ‖∇_{b_i} f‖²)`
pub fn pythagoras_check(bundle: &JacobianBundle) -> (f64, f64) {
    let total = bundle.flatten_params().iter().map(|v| v * v).sum();
    let parts = bundle
        .weight_grads
        .iter()
        .zip(&bundle.bias_grads)
        .map(|(w, b)| w.frobenius_norm_sq() + b.norm_sq())
        .sum();
    (total, parts)
}

/// One point of a perturbation-equivalence measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationResidual {
    pub delta_norm: f64,
    /// `‖f_{w_i + u(δx)}(x) − f(x + δx)‖`
    pub weight: f64,
    /// `‖f_{b_i + u(δx)}(x) − f(x + δx)‖`
    pub bias: f64,
}

/// Residuals of both perturbation constructions for `δx = direction / 2^k`,
/// `k = 0..=halvings`.
pub fn perturbation_residuals(
    mlp: &Mlp,
    x: &Vector,
    layer: usize,
    direction: &Vector,
    halvings: usize,
) -> Result<Vec<PerturbationResidual>, TheoremError> {
    let trace = mlp.forward(x)?;
    let mut out = Vec::with_capacity(halvings + 1);
    for k in 0..=halvings {
        let scale = 0.5_f64.powi(k as i32);
        let dx = Vector::new(direction.as_slice().iter().map(|v| v * scale).collect())?;
        let moved: Vec<f64> = x.as_slice().iter().zip(dx.as_slice()).map(|(a, b)| a + b).collect();
        let target = mlp.eval(&moved)?;

        let mut by_weight = mlp.clone();
        let u = weight_perturbation(mlp, &trace, layer, &dx)?;
        let w = &mut by_weight.layers_mut()[layer].weight;
        *w = Matrix::new(
            w.rows(),
            w.cols(),
            w.data().iter().zip(u.data()).map(|(a, b)| a + b).collect(),
        )?;
        let mut by_bias = mlp.clone();
        let ub = bias_perturbation(mlp, &trace, layer, &dx)?;
        axpy(1.0, ub.as_slice(), by_bias.layers_mut()[layer].bias.as_mut_slice());

        let dist = |y: Vec<f64>| -> f64 {
            y.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        };
        out.push(PerturbationResidual {
            delta_norm: dx.norm(),
            weight: dist(by_weight.eval(x.as_slice())?),
            bias: dist(by_bias.eval(x.as_slice())?),
        });
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Layer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear(w: &[f64], b: f64) -> Mlp {
        Mlp::new(
            w.len(),
            vec![Layer::new(Matrix::new(1, w.len(), w.to_vec()).unwrap(), Vector::from(b), Activation::Identity).unwrap()],
        )
        .unwrap()
    }

    fn tanh_net(sizes: &[usize], seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = Mlp::glorot_uniform(sizes, Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        for l in mlp.layers_mut() {
            for b in l.bias.as_mut_slice() {
                *b = rng.random_range(-0.3..0.3);
            }
        }
        mlp
    }

    #[test]
    fn first_layer_diagnostics() {
        let mlp = tanh_net(&[3, 5, 1], 1);
        let x = Vector::new(vec![0.5, -1.0, 2.0]).unwrap();
        let t = mlp.forward(&x).unwrap();
        let d = layer_diagnostics(&mlp, &t, 0, 0, DEFAULT_EPS).unwrap();
        assert!((d.hprime_opnorm - 1.0).abs() < 1e-15);
        assert_eq!(d.h_norm_sq, x.norm_sq());
        assert_eq!(d.a_i, d.w_spectral * d.hprime_opnorm);
    }

    #[test]
    fn dead_relu_layer_is_degenerate() {
        // first layer maps every positive input to negative pre-activations
        let l0 = Layer::new(Matrix::new(2, 1, vec![-1.0, -2.0]).unwrap(), Vector::zeros(2), Activation::Relu).unwrap();
        let l1 = Layer::new(Matrix::new(1, 2, vec![1.0, 1.0]).unwrap(), Vector::from(0.5), Activation::Identity).unwrap();
        let mlp = Mlp::new(1, vec![l0, l1]).unwrap();
        let t = mlp.forward(&Vector::from(1.0)).unwrap();
        let d = layer_diagnostics(&mlp, &t, 1, 0, DEFAULT_EPS).unwrap();
        assert_eq!(d.hprime_opnorm, 0.0);
        assert!(d.is_degenerate());
        assert!(matches!(bias_lemma_check(&mlp, &t, 1, 0), Err(TheoremError::Degenerate { layer: 1, .. })));
        let v = check_theorem(&mlp, &Vector::from(1.0), 0, DEFAULT_EPS).unwrap();
        assert_eq!(v.skipped_layers.len(), 1);
        assert_eq!(v.skipped_layers[0].index, 1);
        assert!(v.holds(1e-9));
    }

    #[test]
    fn linear_layer_is_tight() {
        let mlp = linear(&[0.3, -1.2, 2.0], 0.7);
        let x = Vector::new(vec![1.0, 2.0, -0.5]).unwrap();
        let v = check_theorem(&mlp, &x, 0, DEFAULT_EPS).unwrap();
        let expected = 1.0 + x.norm_sq();
        assert!((v.lhs - expected).abs() < 1e-12);
        assert!((v.rhs - expected).abs() < 1e-12);
        assert!(v.slack.abs() < 1e-10);
    }

    #[test]
    fn constant_network_has_zero_lhs() {
        let mlp = linear(&[0.0, 0.0], 1.0);
        let v = check_theorem(&mlp, &Vector::new(vec![1.0, 1.0]).unwrap(), 0, DEFAULT_EPS).unwrap();
        assert!(v.all_degenerate);
        assert_eq!(v.lhs, 0.0);
        assert!(v.rhs > 0.0);
    }

    #[test]
    fn lemma_examples_on_scalar_layer() {
        let mlp = linear(&[1.0], 0.0);
        let t = mlp.forward(&Vector::from(3.0)).unwrap();
        let w = weight_lemma_check(&mlp, &t, 0, 0).unwrap();
        assert!((w.lhs - 9.0).abs() < 1e-12 && (w.rhs - 9.0).abs() < 1e-12);
        let mlp = linear(&[2.0], 0.0);
        let t = mlp.forward(&Vector::from(3.0)).unwrap();
        let b = bias_lemma_check(&mlp, &t, 0, 0).unwrap();
        assert!((b.lhs - 1.0).abs() < 1e-12 && (b.rhs - 1.0).abs() < 1e-12);
        // zero input activation: trivially 0 ≤ rhs
        let t0 = mlp.forward(&Vector::from(0.0)).unwrap();
        let w0 = weight_lemma_check(&mlp, &t0, 0, 0).unwrap();
        assert_eq!(w0.lhs, 0.0);
        assert!(w0.holds(0.0));
    }

    #[test]
    fn perturbations_vanish_for_zero_delta() {
        let mlp = tanh_net(&[2, 4, 1], 3);
        let t = mlp.forward_slice(&[0.3, 0.4]).unwrap();
        let zero = Vector::zeros(2);
        assert_eq!(weight_perturbation(&mlp, &t, 1, &zero).unwrap().frobenius_norm_sq(), 0.0);
        assert_eq!(bias_perturbation(&mlp, &t, 1, &zero).unwrap().norm_sq(), 0.0);
        assert!(bias_perturbation(&mlp, &t, 1, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn first_layer_perturbations_are_exact() {
        let w = Matrix::new(2, 2, vec![1.0, 2.0, -0.5, 0.25]).unwrap();
        let mlp = Mlp::new(2, vec![Layer::new(w, Vector::new(vec![0.1, 0.2]).unwrap(), Activation::Identity).unwrap()]).unwrap();
        let x = Vector::new(vec![0.6, -0.8]).unwrap();
        let dir = Vector::new(vec![0.3, 0.1]).unwrap();
        for r in perturbation_residuals(&mlp, &x, 0, &dir, 3).unwrap() {
            assert!(r.weight < 1e-14 && r.bias < 1e-14, "{r:?}");
        }
    }

    #[test]
    fn zero_activation_blocks_weight_perturbation() {
        let mlp = linear(&[1.0, 1.0], 0.0);
        let t = mlp.forward_slice(&[0.0, 0.0]).unwrap();
        assert!(matches!(
            weight_perturbation(&mlp, &t, 0, &Vector::new(vec![0.1, 0.1]).unwrap()),
            Err(TheoremError::Degenerate { .. })
        ));
    }

    #[test]
    fn pythagoras_on_zero_and_single_layer() {
        let mlp = linear(&[0.5, 0.5], 0.0);
        let t = mlp.forward_slice(&[1.0, 2.0]).unwrap();
        let g = parameter_gradients(&mlp, &t, 0).unwrap();
        let (total, parts) = pythagoras_check(&g);
        assert_eq!(total, parts);
        let mut z = g.clone();
        z.weight_grads[0] = Matrix::zeros(1, 2);
        z.bias_grads[0] = Vector::zeros(1);
        assert_eq!(pythagoras_check(&z), (0.0, 0.0));
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let xs = [1.0, 0.5, 0.25, 0.125];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powi(2)).collect();
        assert!((loglog_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
