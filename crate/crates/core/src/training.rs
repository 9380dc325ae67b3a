//! Losses, per-example gradients, the implicit-gradient-regularization
//! penalty and a plain minibatch SGD loop.
//!
//! SGD with step size `h` tracks the gradient flow of the modified loss
//! `L + h · (1/4|D|) Σ ‖∇_θ L(x, θ)‖²`; [`igr_penalty`] returns the
//! `h`-independent factor of the second term.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::{arc_length_1d, discrete_dirichlet_energy, ComplexityError};
use crate::dataset::{Dataset, Sample};
use crate::linalg::{norm_sq, pairwise_sum, Vector};
use crate::network::{parameter_gradients, Mlp, NetworkError, ParamGrads};
use crate::polytope::FeaturePolytope;

/// Polyline resolution for the arc length tracked during training.
pub const TRACKED_ARC_SEGMENTS: usize = 1024;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error("sample {index}: target is not one-hot")]
    NotOneHot { index: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("the residual decomposition needs a scalar-output network, got output dimension {0}")]
    NotScalar(usize),
    #[error("training diverged at step {step}")]
    Diverged {
        step: usize,
        last_record: Option<Box<TrainRecord>>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `½ ‖f(x) − y‖²`
    #[default]
    HalfSquaredError,
    /// Negative log-likelihood of the softmax of the outputs, one-hot `y`.
    SoftmaxCrossEntropy,
}

impl LossKind {
    /// Per-example loss and its gradient with respect to the network output.
    pub fn value_and_grad(self, output: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
        match self {
            LossKind::HalfSquaredError => {
                let r: Vec<f64> = output.iter().zip(y).map(|(f, t)| f - t).collect();
                (0.5 * norm_sq(&r), r)
            }
            LossKind::SoftmaxCrossEntropy => {
                let m = output.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = output.iter().map(|z| (z - m).exp()).sum();
                let lse = m + sum.ln();
                let loss = output.iter().zip(y).map(|(z, t)| t * (lse - z)).sum();
                let grad = output
                    .iter()
                    .zip(y)
                    .map(|(z, t)| (z - lse).exp() - t)
                    .collect();
                (loss, grad)
            }
        }
    }

    pub fn value(self, output: &[f64], y: &[f64]) -> f64 {
        self.value_and_grad(output, y).0
    }
}

fn check_shapes(mlp: &Mlp, dataset: &Dataset, loss: LossKind) -> Result<(), TrainError> {
    if dataset.input_dim() != mlp.input_dim() || dataset.output_dim() != mlp.output_dim() {
        return Err(TrainError::Shape(format!(
            "dataset is {} -> {}, network is {} -> {}",
            dataset.input_dim(),
            dataset.output_dim(),
            mlp.input_dim(),
            mlp.output_dim()
        )));
    }
    if loss == LossKind::SoftmaxCrossEntropy {
        for (index, s) in dataset.iter().enumerate() {
            check_one_hot(&s.y).map_err(|_| TrainError::NotOneHot { index })?;
        }
    }
    Ok(())
}

fn check_one_hot(y: &Vector) -> Result<(), ()> {
    let ones = y.as_slice().iter().filter(|&&v| v == 1.0).count();
    let zeros = y.as_slice().iter().filter(|&&v| v == 0.0).count();
    if ones == 1 && ones + zeros == y.dim() {
        Ok(())
    } else {
        Err(())
    }
}

/// Mean per-example loss over the dataset.
pub fn loss_value(mlp: &Mlp, dataset: &Dataset, loss: LossKind) -> Result<f64, TrainError> {
    check_shapes(mlp, dataset, loss)?;
    let values = dataset
        .iter()
        .map(|s| Ok(loss.value(&mlp.eval(s.x.as_slice())?, s.y.as_slice())))
        .collect::<Result<Vec<f64>, NetworkError>>()?;
    Ok(pairwise_sum(&values) / dataset.len() as f64)
}

fn example_grads(mlp: &Mlp, sample: &Sample, loss: LossKind, grads: &mut ParamGrads) -> Result<f64, TrainError> {
    let trace = mlp.forward(&sample.x)?;
    let (value, out_grad) = loss.value_and_grad(trace.output().as_slice(), sample.y.as_slice());
    grads.fill_zero();
    mlp.accumulate_param_grads(&trace, &out_grad, 1.0, grads);
    Ok(value)
}

/// Flattened `∇_θ L(x, θ)` for one example.
pub fn per_example_loss_gradient(mlp: &Mlp, x: &Vector, y: &Vector, loss: LossKind) -> Result<Vec<f64>, TrainError> {
    if x.dim() != mlp.input_dim() || y.dim() != mlp.output_dim() {
        return Err(TrainError::Shape(format!(
            "example is {} -> {}, network is {} -> {}",
            x.dim(),
            y.dim(),
            mlp.input_dim(),
            mlp.output_dim()
        )));
    }
    if loss == LossKind::SoftmaxCrossEntropy && check_one_hot(y).is_err() {
        return Err(TrainError::NotOneHot { index: 0 });
    }
    let mut grads = ParamGrads::zeros_like(mlp);
    let sample = Sample {
        x: x.clone(),
        y: y.clone(),
    };
    example_grads(mlp, &sample, loss, &mut grads)?;
    Ok(grads.flatten())
}

/// `(∇_θ L, (f(x) − y) ∇_θ f)` for the half squared error of a scalar
/// network; the two agree exactly in exact arithmetic.
pub fn residual_decomposition_check(mlp: &Mlp, x: &Vector, y: &Vector) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    if mlp.output_dim() != 1 {
        return Err(TrainError::NotScalar(mlp.output_dim()));
    }
    let direct = per_example_loss_gradient(mlp, x, y, LossKind::HalfSquaredError)?;
    let trace = mlp.forward(x)?;
    let residual = trace.output()[0] - y[0];
    let composed = parameter_gradients(mlp, &trace, 0)?
        .flatten_params()
        .into_iter()
        .map(|g| residual * g)
        .collect();
    Ok((direct, composed))
}

/// `(1 / 4|D|) Σ_{(x,y)∈D} ‖∇_θ L(x, θ)‖²`
pub fn igr_penalty(mlp: &Mlp, dataset: &Dataset, loss: LossKind) -> Result<f64, TrainError> {
    check_shapes(mlp, dataset, loss)?;
    let mut grads = ParamGrads::zeros_like(mlp);
    let norms = dataset
        .iter()
        .map(|s| {
            example_grads(mlp, s, loss, &mut grads)?;
            Ok(grads.norm_sq())
        })
        .collect::<Result<Vec<f64>, TrainError>>()?;
    Ok(pairwise_sum(&norms) / (4.0 * dataset.len() as f64))
}

/// Full-batch gradient of the mean loss.
pub fn full_batch_gradient(mlp: &Mlp, dataset: &Dataset, loss: LossKind) -> Result<ParamGrads, TrainError> {
    check_shapes(mlp, dataset, loss)?;
    let mut grads = ParamGrads::zeros_like(mlp);
    let scale = 1.0 / dataset.len() as f64;
    for s in dataset {
        let trace = mlp.forward(&s.x)?;
        let (_, out_grad) = loss.value_and_grad(trace.output().as_slice(), s.y.as_slice());
        mlp.accumulate_param_grads(&trace, &out_grad, scale, &mut grads);
    }
    Ok(grads)
}

/// `‖∇_θ (mean loss)‖²`
pub fn loss_surface_slope(mlp: &Mlp, dataset: &Dataset, loss: LossKind) -> Result<f64, TrainError> {
    Ok(full_batch_gradient(mlp, dataset, loss)?.norm_sq())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_track_every")]
    pub track_every: usize,
    #[serde(default)]
    pub loss: LossKind,
}

fn default_track_every() -> usize {
    100
}

impl TrainConfig {
    pub fn validate(&self, dataset_len: usize) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be a non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(TrainError::Config(format!(
                "batch_size must lie in [1, {dataset_len}], got {}",
                self.batch_size
            )));
        }
        if self.track_every == 0 {
            return Err(TrainError::Config("track_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub train_loss: f64,
    pub discrete_de: f64,
    pub igr_penalty: f64,
    /// `train_loss + h · igr_penalty`
    pub modified_loss: f64,
    pub arc_length: Option<f64>,
    pub param_norm_sq: f64,
}

pub const RECORD_CSV_HEADER: &str = "step,train_loss,discrete_de,igr_penalty,modified_loss,arc_length,param_norm_sq";

impl TrainRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{},{:e}",
            self.step,
            self.train_loss,
            self.discrete_de,
            self.igr_penalty,
            self.modified_loss,
            self.arc_length.map(|a| format!("{a:e}")).unwrap_or_default(),
            self.param_norm_sq
        )
    }
}

/// Serializes records as CSV with [`RECORD_CSV_HEADER`].
pub fn records_to_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Smallest interval containing the inputs of a 1-D dataset.
pub fn data_interval(dataset: &Dataset) -> Option<FeaturePolytope> {
    if dataset.input_dim() != 1 {
        return None;
    }
    let (lo, hi) = dataset
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.x[0]), hi.max(s.x[0])));
    FeaturePolytope::interval(lo, hi).ok()
}

/// Every tracked metric on the full dataset.
pub fn measure(mlp: &Mlp, dataset: &Dataset, config: &TrainConfig, step: usize) -> Result<TrainRecord, TrainError> {
    let train_loss = loss_value(mlp, dataset, config.loss)?;
    let igr = igr_penalty(mlp, dataset, config.loss)?;
    let arc_length = match data_interval(dataset) {
        Some(iv) if mlp.output_dim() == 1 => Some(arc_length_1d(mlp, &iv, TRACKED_ARC_SEGMENTS)?),
        _ => None,
    };
    Ok(TrainRecord {
        step,
        train_loss,
        discrete_de: discrete_dirichlet_energy(mlp, dataset)?,
        igr_penalty: igr,
        modified_loss: train_loss + config.learning_rate * igr,
        arc_length,
        param_norm_sq: mlp.param_norm_sq(),
    })
}

/// Callbacks invoked during [`sgd_train`]; both see the current network.
pub trait TrainObserver {
    /// After every parameter update, and once for step 0 before training.
    fn after_step(&mut self, _step: usize, _mlp: &Mlp) -> Result<(), TrainError> {
        Ok(())
    }

    /// Whenever a [`TrainRecord`] is emitted.
    fn on_record(&mut self, _record: &TrainRecord, _mlp: &Mlp) -> Result<(), TrainError> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Epoch-shuffled minibatch order: each epoch is a fresh permutation of the
/// dataset cut into full batches; a remainder smaller than a batch is
/// dropped.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchSampler {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            cursor: n,
            batch_size,
        }
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let batch = &self.order[self.cursor..self.cursor + self.batch_size];
        self.cursor += self.batch_size;
        batch
    }
}

/// Vanilla minibatch SGD: `θ ← θ − h · mean_batch ∇_θ L`. Records are taken
/// at step 0, every `track_every` steps and after the final step.
pub fn sgd_train<O: TrainObserver + ?Sized>(
    mut mlp: Mlp,
    dataset: &Dataset,
    config: &TrainConfig,
    observer: &mut O,
) -> Result<(Mlp, Vec<TrainRecord>), TrainError> {
    check_shapes(&mlp, dataset, config.loss)?;
    config.validate(dataset.len())?;
    let mut records = Vec::new();
    let record = |step: usize, mlp: &Mlp, records: &mut Vec<TrainRecord>, observer: &mut O| {
        let rec = measure(mlp, dataset, config, step)?;
        if !rec.train_loss.is_finite() {
            return Err(TrainError::Diverged {
                step,
                last_record: records.last().cloned().map(Box::new),
            });
        }
        observer.on_record(&rec, mlp)?;
        records.push(rec);
        Ok(())
    };

    observer.after_step(0, &mlp)?;
    record(0, &mlp, &mut records, observer)?;

    let mut sampler = BatchSampler::new(dataset.len(), config.batch_size, config.seed);
    let mut grads = ParamGrads::zeros_like(&mlp);
    let scale = 1.0 / config.batch_size as f64;
    let samples = dataset.samples();
    for step in 1..=config.steps {
        grads.fill_zero();
        let mut batch_loss = 0.0;
        for &i in sampler.next_batch() {
            let s = &samples[i];
            let trace = mlp.forward(&s.x)?;
            let (value, out_grad) = config.loss.value_and_grad(trace.output().as_slice(), s.y.as_slice());
            batch_loss += value;
            mlp.accumulate_param_grads(&trace, &out_grad, scale, &mut grads);
        }
        if !batch_loss.is_finite() || !grads.is_finite() {
            return Err(TrainError::Diverged {
                step,
                last_record: records.last().cloned().map(Box::new),
            });
        }
        mlp.add_scaled(&grads, -config.learning_rate);
        if !mlp.is_finite() {
            return Err(TrainError::Diverged {
                step,
                last_record: records.last().cloned().map(Box::new),
            });
        }
        observer.after_step(step, &mlp)?;
        if step % config.track_every == 0 || step == config.steps {
            record(step, &mlp, &mut records, observer)?;
        }
    }
    Ok((mlp, records))
}
