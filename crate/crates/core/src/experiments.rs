//! Dataset generators and the two end-to-end studies: fitting a handful of
//! 1-D points with a wide network, and sweeping the SGD learning rate on a
//! small classification problem.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::complexity::{arc_length_1d, chord_path_length, ComplexityError};
use crate::dataset::{Dataset, DatasetError};
use crate::network::{Activation, Mlp, NetworkError};
use crate::training::{
    data_interval, loss_surface_slope, sgd_train, LossKind, TrainConfig, TrainError, TrainObserver, TrainRecord,
};

/// Grid resolution of stored function snapshots.
pub const SNAPSHOT_POINTS: usize = 512;
/// Polyline resolution of the final arc length in a regression summary.
pub const SUMMARY_ARC_SEGMENTS: usize = 4096;
/// Amplitude of the Gaussian noise added by the smooth 1-D generator.
pub const SMOOTH_NOISE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Complexity(#[from] ComplexityError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OneDimGenerator {
    /// Random x in range; y from a seeded sum of three sinusoids plus noise.
    RandomSmooth,
    /// Evenly spaced x including both endpoints; y uniform in [-1, 1].
    FixedSeeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationKind {
    TwoMoons,
    GaussianBlobs,
}

pub fn make_1d_dataset(
    n_points: usize,
    x_range: (f64, f64),
    generator: OneDimGenerator,
    seed: u64,
) -> Result<Dataset, ExperimentError> {
    let (lo, hi) = x_range;
    if n_points < 2 {
        return Err(ExperimentError::Invalid(format!("need at least 2 points, got {n_points}")));
    }
    if !(lo < hi) {
        return Err(ExperimentError::Invalid(format!("empty x range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<(f64, f64)> = match generator {
        OneDimGenerator::FixedSeeded => (0..n_points)
            .map(|i| {
                let x = if i + 1 == n_points {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n_points - 1) as f64
                };
                (x, rng.random_range(-1.0..=1.0))
            })
            .collect(),
        OneDimGenerator::RandomSmooth => {
            let width = hi - lo;
            let waves: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    let amp = rng.random_range(0.3..1.0) / 1.5;
                    let freq = 2.0 * PI * rng.random_range(0.25..1.0) / width;
                    let phase = rng.random_range(0.0..2.0 * PI);
                    (amp, freq, phase)
                })
                .collect();
            let mut xs: Vec<f64> = Vec::with_capacity(n_points);
            while xs.len() < n_points {
                let x = rng.random_range(lo..=hi);
                if !xs.contains(&x) {
                    xs.push(x);
                }
            }
            xs.sort_by(f64::total_cmp);
            xs.into_iter()
                .map(|x| {
                    let clean: f64 = waves.iter().map(|(a, w, p)| a * (w * x + p).sin()).sum();
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    (x, clean + SMOOTH_NOISE * noise)
                })
                .collect()
        }
    };
    Ok(Dataset::from_scalar_pairs(&points)?)
}

fn one_hot(class: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[class] = 1.0;
    v
}

/// Two balanced classes in the plane, shuffled and split 80/20 into
/// training and validation sets.
pub fn make_classification_dataset(
    kind: ClassificationKind,
    n: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), ExperimentError> {
    if n < 10 {
        return Err(ExperimentError::Invalid(format!("need at least 10 points, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(ExperimentError::Invalid(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        noise * z
    };
    let mut points: Vec<(Vec<f64>, usize)> = (0..n)
        .map(|i| {
            let class = usize::from(i >= n / 2);
            let (x, y) = match kind {
                ClassificationKind::TwoMoons => {
                    let t = rng.random_range(0.0..PI);
                    if class == 0 {
                        (t.cos(), t.sin())
                    } else {
                        (1.0 - t.cos(), 0.5 - t.sin())
                    }
                }
                ClassificationKind::GaussianBlobs => (if class == 0 { -2.0 } else { 2.0 }, 0.0),
            };
            (vec![x + gauss(&mut rng), y + gauss(&mut rng)], class)
        })
        .collect();
    points.shuffle(&mut rng);
    let n_train = n * 4 / 5;
    let split = |pts: &[(Vec<f64>, usize)]| {
        Dataset::from_rows(
            pts.iter().map(|p| p.0.clone()).collect(),
            pts.iter().map(|p| one_hot(p.1, 2)).collect(),
        )
    };
    Ok((split(&points[..n_train])?, split(&points[n_train..])?))
}

/// Fraction of samples whose largest output matches the one-hot target.
pub fn accuracy(mlp: &Mlp, dataset: &Dataset) -> Result<f64, NetworkError> {
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i)
    };
    let mut correct = 0usize;
    for s in dataset {
        if argmax(&mlp.eval(s.x.as_slice())?) == argmax(s.y.as_slice()) {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Regression1d {
        n_points: usize,
        x_range: (f64, f64),
        kind: OneDimGenerator,
        seed: u64,
    },
    Classification {
        kind: ClassificationKind,
        n: usize,
        noise: f64,
        seed: u64,
    },
}

/// How freshly initialized biases are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasInit {
    #[default]
    Zero,
    /// Uniform in `[-scale, scale]`.
    Uniform { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub init_seed: u64,
    #[serde(default)]
    pub bias_init: BiasInit,
}

impl ModelSpec {
    /// Network mapping `input_dim` to `output_dim` through the hidden
    /// widths, with an identity output layer.
    pub fn build(&self, input_dim: usize, output_dim: usize, seed: u64) -> Result<Mlp, ExperimentError> {
        let mut sizes = vec![input_dim];
        sizes.extend(&self.hidden_widths);
        sizes.push(output_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mlp = Mlp::glorot_uniform(&sizes, self.activation, Activation::Identity, &mut rng)?;
        if let BiasInit::Uniform { scale } = self.bias_init {
            for layer in mlp.layers_mut() {
                for b in layer.bias.as_mut_slice() {
                    *b = rng.random_range(-scale..=scale);
                }
            }
        }
        Ok(mlp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub learning_rates: Vec<f64>,
    /// Each seed drives both the initialization and the minibatch order.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train_config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_steps: Option<Vec<usize>>,
}

impl ExperimentSpec {
    /// Checks value ranges; returns the JSON path of the first offense.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let fail = |path: &str, msg: String| Err((path.to_string(), msg));
        let tc = &self.train_config;
        if !(tc.learning_rate >= 0.0 && tc.learning_rate.is_finite()) {
            return fail("train_config.learning_rate", format!("must be a non-negative number, got {}", tc.learning_rate));
        }
        if tc.batch_size == 0 {
            return fail("train_config.batch_size", "must be >= 1".into());
        }
        if tc.track_every == 0 {
            return fail("train_config.track_every", "must be >= 1".into());
        }
        if self.model.hidden_widths.contains(&0) {
            return fail("model.hidden_widths", "widths must be positive".into());
        }
        if let BiasInit::Uniform { scale } = self.model.bias_init {
            if !(scale > 0.0 && scale.is_finite()) {
                return fail("model.bias_init.scale", format!("must be positive, got {scale}"));
            }
        }
        match &self.dataset {
            DatasetSpec::Regression1d { n_points, x_range, .. } => {
                if *n_points < 2 {
                    return fail("dataset.n_points", "must be >= 2".into());
                }
                if !(x_range.0 < x_range.1) {
                    return fail("dataset.x_range", "lower bound must be below upper bound".into());
                }
                if tc.batch_size > *n_points {
                    return fail("train_config.batch_size", format!("exceeds the {n_points} data points"));
                }
            }
            DatasetSpec::Classification { n, noise, .. } => {
                if *n < 10 {
                    return fail("dataset.n", "must be >= 10".into());
                }
                if !(*noise >= 0.0) {
                    return fail("dataset.noise", "must be >= 0".into());
                }
                if tc.batch_size > n * 4 / 5 {
                    return fail("train_config.batch_size", "exceeds the training split".into());
                }
            }
        }
        if let Some(steps) = &self.snapshot_steps {
            if steps.windows(2).any(|w| w[0] > w[1]) {
                return fail("snapshot_steps", "must be sorted".into());
            }
            if steps.iter().any(|&s| s > tc.steps) {
                return fail("snapshot_steps", format!("entries must lie in [0, {}]", tc.steps));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.learning_rates.is_empty() {
                return fail("sweep.learning_rates", "must be non-empty".into());
            }
            if sweep.seeds.is_empty() {
                return fail("sweep.seeds", "must be non-empty".into());
            }
            if let Some(lr) = sweep.learning_rates.iter().find(|lr| !(**lr >= 0.0 && lr.is_finite())) {
                return fail("sweep.learning_rates", format!("must be non-negative, got {lr}"));
            }
        }
        Ok(())
    }

    fn checked(&self) -> Result<(), ExperimentError> {
        self.validate()
            .map_err(|(path, msg)| ExperimentError::Invalid(format!("{path}: {msg}")))
    }
}

/// The function evaluated on a uniform grid at one training step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub step: usize,
    pub xs: Vec<f64>,
    pub fs: Vec<f64>,
}

impl Snapshot {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,f_x\n");
        for (x, f) in self.xs.iter().zip(&self.fs) {
            out.push_str(&format!("{x:e},{f:e}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionSummary {
    pub final_train_loss: f64,
    pub final_arc_length: f64,
    pub chord_path_length: f64,
    /// `final_arc_length / chord_path_length`
    pub arc_to_chord_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct RegressionOutcome {
    pub dataset: Dataset,
    pub model: Mlp,
    pub records: Vec<TrainRecord>,
    pub snapshots: Vec<Snapshot>,
    pub summary: RegressionSummary,
}

struct SnapshotTaker<'a> {
    steps: &'a [usize],
    grid: Vec<f64>,
    taken: Vec<Snapshot>,
}

impl TrainObserver for SnapshotTaker<'_> {
    fn after_step(&mut self, step: usize, mlp: &Mlp) -> Result<(), TrainError> {
        if self.steps.binary_search(&step).is_ok() && self.taken.last().is_none_or(|s| s.step != step) {
            let fs = self
                .grid
                .iter()
                .map(|x| Ok(mlp.eval(&[*x])?[0]))
                .collect::<Result<Vec<f64>, NetworkError>>()?;
            self.taken.push(Snapshot {
                step,
                xs: self.grid.clone(),
                fs,
            });
        }
        Ok(())
    }
}

pub fn build_dataset(spec: &DatasetSpec) -> Result<(Dataset, Option<Dataset>), ExperimentError> {
    match *spec {
        DatasetSpec::Regression1d {
            n_points,
            x_range,
            kind,
            seed,
        } => Ok((make_1d_dataset(n_points, x_range, kind, seed)?, None)),
        DatasetSpec::Classification { kind, n, noise, seed } => {
            let (train, val) = make_classification_dataset(kind, n, noise, seed)?;
            Ok((train, Some(val)))
        }
    }
}

/// Trains a scalar network on 1-D data, storing the learned function at the
/// requested steps and comparing its final arc length with the chord path
/// through the data.
pub fn run_regression_1d(spec: &ExperimentSpec) -> Result<RegressionOutcome, ExperimentError> {
    spec.checked()?;
    let DatasetSpec::Regression1d { .. } = spec.dataset else {
        return Err(ExperimentError::Invalid("dataset: regression needs a regression1d dataset".into()));
    };
    let (dataset, _) = build_dataset(&spec.dataset)?;
    let mlp = spec.model.build(1, 1, spec.model.init_seed)?;
    let interval = data_interval(&dataset)
        .ok_or_else(|| ExperimentError::Invalid("dataset: all x values coincide".into()))?;
    let (lo, hi) = interval.bounds();
    let grid: Vec<f64> = (0..SNAPSHOT_POINTS)
        .map(|j| lo[0] + (hi[0] - lo[0]) * j as f64 / (SNAPSHOT_POINTS - 1) as f64)
        .collect();
    let steps = spec.snapshot_steps.clone().unwrap_or_default();
    let mut taker = SnapshotTaker {
        steps: &steps,
        grid,
        taken: Vec::new(),
    };
    let (model, records) = sgd_train(mlp, &dataset, &spec.train_config, &mut taker)?;
    let final_arc_length = arc_length_1d(&model, &interval, SUMMARY_ARC_SEGMENTS)?;
    let chord = chord_path_length(&dataset)?;
    let summary = RegressionSummary {
        final_train_loss: records.last().map_or(f64::NAN, |r| r.train_loss),
        final_arc_length,
        chord_path_length: chord,
        arc_to_chord_ratio: final_arc_length / chord,
    };
    Ok(RegressionOutcome {
        dataset,
        model,
        records,
        snapshots: taker.taken,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub learning_rate: f64,
    pub seed: u64,
    pub best_val_accuracy: f64,
    pub step_of_best: usize,
    pub discrete_de_at_best: f64,
    pub slope_at_best: f64,
    pub diverged: bool,
}

pub const SWEEP_CSV_HEADER: &str =
    "learning_rate,seed,best_val_accuracy,step_of_best,discrete_de_at_best,slope_at_best,diverged";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{},{:e},{},{:e},{:e},{}\n",
                r.learning_rate,
                r.seed,
                r.best_val_accuracy,
                r.step_of_best,
                r.discrete_de_at_best,
                r.slope_at_best,
                r.diverged
            ));
        }
        out
    }

    /// Per distinct learning rate (ascending), the mean of `metric` over the
    /// non-diverged rows.
    pub fn mean_by_lr(&self, metric: impl Fn(&SweepRow) -> f64) -> Vec<(f64, f64)> {
        let mut lrs: Vec<f64> = self.rows.iter().map(|r| r.learning_rate).collect();
        lrs.sort_by(f64::total_cmp);
        lrs.dedup();
        lrs.into_iter()
            .filter_map(|lr| {
                let vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.learning_rate == lr && !r.diverged)
                    .map(&metric)
                    .collect();
                (!vals.is_empty()).then(|| (lr, vals.iter().sum::<f64>() / vals.len() as f64))
            })
            .collect()
    }

    /// Spearman correlation between learning rate and the per-rate mean of
    /// `metric`.
    pub fn lr_rank_correlation(&self, metric: impl Fn(&SweepRow) -> f64) -> f64 {
        let means = self.mean_by_lr(metric);
        let xs: Vec<f64> = means.iter().map(|m| m.0).collect();
        let ys: Vec<f64> = means.iter().map(|m| m.1).collect();
        spearman(&xs, &ys)
    }
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; NaN for fewer than two points or constant
/// input.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

struct BestTracker<'a> {
    train: &'a Dataset,
    val: &'a Dataset,
    loss: LossKind,
    best: Option<(f64, usize, f64, f64)>,
}

impl TrainObserver for BestTracker<'_> {
    fn on_record(&mut self, record: &TrainRecord, mlp: &Mlp) -> Result<(), TrainError> {
        let acc = accuracy(mlp, self.val)?;
        if self.best.is_none_or(|b| acc > b.0) {
            let slope = loss_surface_slope(mlp, self.train, self.loss)?;
            self.best = Some((acc, record.step, record.discrete_de, slope));
        }
        Ok(())
    }
}

/// One cell of a learning-rate sweep.
pub fn run_sweep_cell(
    spec: &ExperimentSpec,
    train: &Dataset,
    val: &Dataset,
    learning_rate: f64,
    seed: u64,
) -> Result<SweepRow, ExperimentError> {
    let mlp = spec.model.build(train.input_dim(), train.output_dim(), seed)?;
    let config = TrainConfig {
        learning_rate,
        seed,
        ..spec.train_config
    };
    let mut tracker = BestTracker {
        train,
        val,
        loss: config.loss,
        best: None,
    };
    let outcome = sgd_train(mlp, train, &config, &mut tracker);
    let diverged = match outcome {
        Ok(_) => false,
        Err(TrainError::Diverged { .. }) => true,
        Err(e) => return Err(e.into()),
    };
    let (best_val_accuracy, step_of_best, discrete_de_at_best, slope_at_best) =
        tracker.best.unwrap_or((f64::NAN, 0, f64::NAN, f64::NAN));
    Ok(SweepRow {
        learning_rate,
        seed,
        best_val_accuracy,
        step_of_best,
        discrete_de_at_best,
        slope_at_best,
        diverged,
    })
}

/// Trains one model per `(learning_rate, seed)` pair and records its
/// Dirichlet energy and loss-surface slope at the earliest step of maximal
/// validation accuracy. Rows are sorted by `(learning_rate, seed)`.
pub fn run_lr_sweep(spec: &ExperimentSpec) -> Result<SweepResult, ExperimentError> {
    spec.checked()?;
    let sweep = spec
        .sweep
        .as_ref()
        .ok_or_else(|| ExperimentError::Invalid("sweep: missing".into()))?;
    let (train, val) = build_dataset(&spec.dataset)?;
    let val = val.ok_or_else(|| ExperimentError::Invalid("dataset: sweep needs a classification dataset".into()))?;
    let cells: Vec<(f64, u64)> = sweep
        .learning_rates
        .iter()
        .flat_map(|&lr| sweep.seeds.iter().map(move |&s| (lr, s)))
        .collect();
    let mut rows = cells
        .par_iter()
        .map(|&(lr, seed)| run_sweep_cell(spec, &train, &val, lr, seed))
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| a.learning_rate.total_cmp(&b.learning_rate).then(a.seed.cmp(&b.seed)));
    Ok(SweepResult { rows })
}
