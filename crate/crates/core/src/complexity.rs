//! Geometric complexity of a learned function: Dirichlet energy (discrete
//! and integrated), graph volume with its first-order Taylor split, and the
//! 1-D arc length.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::linalg::pairwise_sum;
use crate::network::{input_jacobian_norm_sq, Mlp, NetworkError};
use crate::polytope::{polytope_from_data, FeaturePolytope, PolytopeError, PolytopeMode};

/// Hull rejection sampling gives up below this acceptance rate.
pub const MIN_REJECTION_EFFICIENCY: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ComplexityError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid quadrature: {0}")]
    Quadrature(String),
    #[error(
        "hull rejection efficiency {efficiency:.2e} is below {MIN_REJECTION_EFFICIENCY:e}; \
         use a box polytope instead"
    )]
    RejectionEfficiency { efficiency: f64 },
    #[error("duplicate x = {x} with different targets; no interpolating function exists")]
    DuplicateX { x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Quadrature {
    /// Composite trapezoid rule on a uniform 1-D grid.
    Grid1D { n_segments: usize },
    /// Uniform samples over the bounding box, rejected into hulls.
    MonteCarlo { n_samples: usize, seed: u64 },
}

/// Integration nodes with their volume-element weights.
#[derive(Debug, Clone)]
pub struct QuadratureNodes {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Total measure the weights sum to.
    pub volume: f64,
    monte_carlo: bool,
}

/// Integral estimate with its standard error (Monte Carlo only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: Option<f64>,
}

impl QuadratureNodes {
    pub fn new(polytope: &FeaturePolytope, quad: Quadrature) -> Result<Self, ComplexityError> {
        match quad {
            Quadrature::Grid1D { n_segments } => {
                if n_segments < 2 {
                    return Err(ComplexityError::Quadrature(format!(
                        "grid needs at least 2 segments, got {n_segments}"
                    )));
                }
                let (lo, hi) = match polytope {
                    FeaturePolytope::Interval { lo, hi } => (*lo, *hi),
                    FeaturePolytope::Box { lo, hi } if lo.len() == 1 => (lo[0], hi[0]),
                    _ => {
                        return Err(ComplexityError::Quadrature(
                            "Grid1D quadrature needs a one-dimensional polytope".into(),
                        ))
                    }
                };
                let h = (hi - lo) / n_segments as f64;
                let points = uniform_nodes(lo, hi, n_segments)
                    .into_iter()
                    .map(|x| vec![x])
                    .collect();
                let mut weights = vec![h; n_segments + 1];
                weights[0] = h / 2.0;
                weights[n_segments] = h / 2.0;
                Ok(Self {
                    points,
                    weights,
                    volume: hi - lo,
                    monte_carlo: false,
                })
            }
            Quadrature::MonteCarlo { n_samples, seed } => {
                if n_samples == 0 {
                    return Err(ComplexityError::Quadrature("n_samples must be >= 1".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (lo, hi) = polytope.bounds();
                let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect()
                };
                let mut points = Vec::with_capacity(n_samples);
                match polytope {
                    FeaturePolytope::Hull(hull) => {
                        let max_attempts = (n_samples as f64 / MIN_REJECTION_EFFICIENCY).ceil() as usize;
                        let mut attempts = 0usize;
                        while points.len() < n_samples && attempts < max_attempts {
                            let p = draw(&mut rng);
                            attempts += 1;
                            if hull.contains(&p) {
                                points.push(p);
                            }
                        }
                        if points.len() < n_samples {
                            return Err(ComplexityError::RejectionEfficiency {
                                efficiency: points.len() as f64 / attempts as f64,
                            });
                        }
                    }
                    _ => points.extend((0..n_samples).map(|_| draw(&mut rng))),
                }
                let volume = polytope.volume();
                Ok(Self {
                    points,
                    weights: vec![volume / n_samples as f64; n_samples],
                    volume,
                    monte_carlo: true,
                })
            }
        }
    }

    /// `Σ w_j g(x_j)` with pairwise summation.
    pub fn integrate(&self, values: &[f64]) -> Estimate {
        let terms: Vec<f64> = values.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        let value = pairwise_sum(&terms);
        let std_error = self.monte_carlo.then(|| {
            let n = values.len() as f64;
            let mean = pairwise_sum(values) / n;
            let var = if values.len() > 1 {
                pairwise_sum(&values.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>()) / (n - 1.0)
            } else {
                0.0
            };
            self.volume * (var / n).sqrt()
        });
        Estimate { value, std_error }
    }
}

fn uniform_nodes(lo: f64, hi: f64, n_segments: usize) -> Vec<f64> {
    let h = (hi - lo) / n_segments as f64;
    (0..=n_segments)
        .map(|j| if j == n_segments { hi } else { lo + h * j as f64 })
        .collect()
}

fn check_dims(mlp: &Mlp, polytope: &FeaturePolytope) -> Result<(), ComplexityError> {
    if polytope.dim() != mlp.input_dim() {
        return Err(ComplexityError::Dimension(format!(
            "polytope has dimension {}, network input has {}",
            polytope.dim(),
            mlp.input_dim()
        )));
    }
    Ok(())
}

/// `‖∇_x f‖²` (squared Frobenius norm of the input Jacobian) at each point.
pub fn gradient_norms_sq(mlp: &Mlp, points: &[Vec<f64>]) -> Result<Vec<f64>, ComplexityError> {
    points
        .iter()
        .map(|p| {
            let trace = mlp.forward_slice(p)?;
            Ok(input_jacobian_norm_sq(mlp, &trace)?)
        })
        .collect()
}

/// `(1 / 2|D|) Σ_{x∈D} ‖∇_x f(x)‖²`
pub fn discrete_dirichlet_energy(mlp: &Mlp, dataset: &Dataset) -> Result<f64, ComplexityError> {
    if dataset.input_dim() != mlp.input_dim() {
        return Err(ComplexityError::Dimension(format!(
            "dataset inputs have dimension {}, network expects {}",
            dataset.input_dim(),
            mlp.input_dim()
        )));
    }
    let points: Vec<Vec<f64>> = dataset.iter().map(|s| s.x.as_slice().to_vec()).collect();
    let g = gradient_norms_sq(mlp, &points)?;
    Ok(pairwise_sum(&g) / (2.0 * dataset.len() as f64))
}

/// `½ ∫ ‖∇_x f‖² dx` over the polytope.
pub fn continuous_dirichlet_energy(
    mlp: &Mlp,
    polytope: &FeaturePolytope,
    quad: Quadrature,
) -> Result<Estimate, ComplexityError> {
    check_dims(mlp, polytope)?;
    let nodes = QuadratureNodes::new(polytope, quad)?;
    let g = gradient_norms_sq(mlp, &nodes.points)?;
    let est = nodes.integrate(&g);
    Ok(Estimate {
        value: 0.5 * est.value,
        std_error: est.std_error.map(|e| 0.5 * e),
    })
}

/// `∫ sqrt(1 + ‖∇_x f‖²) dx` over the polytope.
pub fn graph_volume(mlp: &Mlp, polytope: &FeaturePolytope, quad: Quadrature) -> Result<Estimate, ComplexityError> {
    check_dims(mlp, polytope)?;
    let nodes = QuadratureNodes::new(polytope, quad)?;
    let g = gradient_norms_sq(mlp, &nodes.points)?;
    let integrand: Vec<f64> = g.iter().map(|v| (1.0 + v).sqrt()).collect();
    Ok(nodes.integrate(&integrand))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub discrete_de: f64,
    pub continuous_de: Option<f64>,
    pub graph_volume: Option<f64>,
    pub polytope_volume: Option<f64>,
    /// `graph_volume − polytope_volume − continuous_de`; never positive.
    pub taylor_residual: Option<f64>,
    /// `⅛ ∫ ‖∇_x f‖⁴`, bounding `|taylor_residual|` from above.
    pub taylor_remainder_bound: Option<f64>,
    pub arc_length: Option<f64>,
}

/// Graph volume, polytope volume and Dirichlet energy on one shared set of
/// nodes, plus the second-order remainder bound.
pub fn taylor_decomposition(
    mlp: &Mlp,
    polytope: &FeaturePolytope,
    quad: Quadrature,
) -> Result<ComplexityReport, ComplexityError> {
    check_dims(mlp, polytope)?;
    let nodes = QuadratureNodes::new(polytope, quad)?;
    let g = gradient_norms_sq(mlp, &nodes.points)?;
    let volume = nodes.integrate(&vec![1.0; g.len()]).value;
    let graph = nodes
        .integrate(&g.iter().map(|v| (1.0 + v).sqrt()).collect::<Vec<_>>())
        .value;
    let de = 0.5 * nodes.integrate(&g).value;
    let quartic = nodes.integrate(&g.iter().map(|v| v * v).collect::<Vec<_>>()).value;
    // pointwise sqrt(1+z) − 1 − z/2, summed with the same weights
    let residual = nodes
        .integrate(&g.iter().map(|v| taylor_gap(*v)).collect::<Vec<_>>())
        .value;
    Ok(ComplexityReport {
        discrete_de: 0.0,
        continuous_de: Some(de),
        graph_volume: Some(graph),
        polytope_volume: Some(volume),
        taylor_residual: Some(residual),
        taylor_remainder_bound: Some(quartic / 8.0),
        arc_length: None,
    })
}

/// Every measure for `mlp` on `dataset`, integrating over the polytope built
/// from the data. The arc length is filled in for scalar 1-D networks only.
pub fn complexity_report(
    mlp: &Mlp,
    dataset: &Dataset,
    mode: PolytopeMode,
    quad: Quadrature,
    arc_segments: usize,
) -> Result<ComplexityReport, ComplexityError> {
    let polytope = polytope_from_data(dataset, mode)?;
    let mut report = taylor_decomposition(mlp, &polytope, quad)?;
    report.discrete_de = discrete_dirichlet_energy(mlp, dataset)?;
    if let FeaturePolytope::Interval { .. } = polytope {
        if mlp.output_dim() == 1 {
            report.arc_length = Some(arc_length_1d(mlp, &polytope, arc_segments)?);
        }
    }
    Ok(report)
}

/// `sqrt(1+z) − 1 − z/2`, evaluated without cancellation.
fn taylor_gap(z: f64) -> f64 {
    let s = (1.0 + z).sqrt();
    // sqrt(1+z) − 1 = z / (sqrt(1+z) + 1)
    let a = z / (s + 1.0);
    // a − z/2 = −a² / 2
    -0.5 * a * a
}

/// Length of the polyline through `(x, f(x))` at `n_segments + 1` uniform
/// nodes of `[lo, hi]`.
pub fn arc_length_1d(mlp: &Mlp, interval: &FeaturePolytope, n_segments: usize) -> Result<f64, ComplexityError> {
    let FeaturePolytope::Interval { lo, hi } = *interval else {
        return Err(ComplexityError::Dimension("arc length needs an interval".into()));
    };
    if mlp.input_dim() != 1 || mlp.output_dim() != 1 {
        return Err(ComplexityError::Dimension(format!(
            "arc length needs a scalar function of one variable, got {} -> {}",
            mlp.input_dim(),
            mlp.output_dim()
        )));
    }
    if n_segments == 0 {
        return Err(ComplexityError::Quadrature("n_segments must be >= 1".into()));
    }
    let xs = uniform_nodes(lo, hi, n_segments);
    let ys = xs
        .iter()
        .map(|x| Ok(mlp.eval(&[*x])?[0]))
        .collect::<Result<Vec<f64>, NetworkError>>()?;
    Ok(polyline_length(&xs, &ys))
}

fn polyline_length(xs: &[f64], ys: &[f64]) -> f64 {
    let pieces: Vec<f64> = xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]).hypot(y[1] - y[0]))
        .collect();
    pairwise_sum(&pieces)
}

/// Length of the shortest path through the data points, taken in order of x.
pub fn chord_path_length(dataset: &Dataset) -> Result<f64, ComplexityError> {
    if dataset.input_dim() != 1 || dataset.output_dim() != 1 {
        return Err(ComplexityError::Dimension("chord path needs 1-D data".into()));
    }
    let mut pts: Vec<(f64, f64)> = dataset.iter().map(|s| (s.x[0], s.y[0])).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    if let Some(w) = pts.windows(2).find(|w| w[0].0 == w[1].0 && w[0].1 != w[1].1) {
        return Err(ComplexityError::DuplicateX { x: w[0].0 });
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    Ok(polyline_length(&xs, &ys))
}
