//! Geometric complexity of small neural networks.
//!
//! * [`network`]: dense MLPs with exact reverse-mode input and parameter
//!   gradients, plus central-difference oracles.
//! * [`complexity`]: Dirichlet energy, graph volume and arc length.
//! * [`theorem`]: checks of the inequality bounding input-gradient norms by
//!   parameter-gradient norms, layer by layer.
//! * [`training`]: losses, the implicit gradient regularization penalty and
//!   deterministic minibatch SGD.
//! * [`experiments`]: the 1-D interpolation study and the learning-rate
//!   sweep.

pub mod complexity;
pub mod dataset;
pub mod experiments;
pub mod linalg;
pub mod network;
pub mod polytope;
pub mod theorem;
pub mod training;

pub use complexity::{complexity_report, ComplexityReport, Quadrature};
pub use dataset::{Dataset, Sample};
pub use experiments::{ExperimentSpec, SweepResult};
pub use linalg::{Matrix, Vector};
pub use network::{Activation, ForwardTrace, JacobianBundle, Layer, Mlp};
pub use polytope::{FeaturePolytope, PolytopeMode};
pub use theorem::{LayerDiagnostics, TheoremVerdict};
pub use training::{LossKind, TrainConfig, TrainRecord};
