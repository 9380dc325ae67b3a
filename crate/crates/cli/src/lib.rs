//! Command implementations behind the `geomrazor` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use geomrazor::complexity::{complexity_report, Quadrature};
use geomrazor::experiments::{build_dataset, run_lr_sweep, run_regression_1d, ExperimentSpec, SweepResult};
use geomrazor::polytope::PolytopeMode;
use geomrazor::theorem::{TheoremChecker, TheoremVerdict};
use geomrazor::training::{records_to_csv, sgd_train};
use geomrazor::{Dataset, Mlp, Vector};
use serde::Serialize;

pub mod plot;

pub use plot::emit_plot;

/// Reads and validates an experiment spec. Errors name the JSON path of the
/// offending field, e.g. `train_config.learning_rate`.
pub fn parse_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
    parse_spec_str(&text)
}

pub fn parse_spec_str(text: &str) -> Result<ExperimentSpec> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let spec: ExperimentSpec = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("spec field `{path}`: {}", e.inner())
    })?;
    spec.validate()
        .map_err(|(path, msg)| anyhow!("spec field `{path}`: {msg}"))?;
    Ok(spec)
}

/// Canonical JSON form of a spec: fixed key order, defaults written out.
pub fn canonical_spec(spec: &ExperimentSpec) -> String {
    serde_json::to_string_pretty(spec).expect("spec serialization is infallible")
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub struct MeasureArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub polytope: PolytopeMode,
    pub samples: usize,
    pub segments: usize,
    pub seed: u64,
}

/// Writes `report.json` with every complexity measure of the checkpoint on
/// the dataset.
pub fn measure(args: &MeasureArgs) -> Result<PathBuf> {
    let mlp = Mlp::from_json(&read(&args.model)?).context("loading model")?;
    let data = Dataset::from_json(&read(&args.data)?).context("loading dataset")?;
    let quad = if data.input_dim() == 1 && args.polytope != PolytopeMode::Box && args.polytope != PolytopeMode::Hull {
        Quadrature::Grid1D {
            n_segments: args.segments,
        }
    } else {
        Quadrature::MonteCarlo {
            n_samples: args.samples,
            seed: args.seed,
        }
    };
    let report = complexity_report(&mlp, &data, args.polytope, quad, args.segments)?;
    prepare_out(&args.out)?;
    write_json(&args.out, "report.json", &report)
}

pub struct CheckTheoremArgs {
    pub model: PathBuf,
    pub inputs: PathBuf,
    pub out: PathBuf,
    pub eps: f64,
    pub output_index: usize,
    pub rel_tol: f64,
}

#[derive(Debug, Serialize)]
pub struct TheoremReport {
    pub n_inputs: usize,
    pub n_holding: usize,
    pub rel_tol: f64,
    pub verdicts: Vec<TheoremVerdict>,
}

/// Writes `theorem.json` and fails if the inequality is violated at any
/// input.
pub fn check_theorem(args: &CheckTheoremArgs) -> Result<PathBuf> {
    let mlp = Mlp::from_json(&read(&args.model)?).context("loading model")?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&read(&args.inputs)?).context("inputs must be a JSON array of arrays")?;
    if rows.is_empty() {
        bail!("inputs file holds no inputs");
    }
    let checker = TheoremChecker::new(&mlp, args.eps)?;
    let verdicts = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let x = Vector::new(r).with_context(|| format!("input {i}"))?;
            checker.check(&x, args.output_index).with_context(|| format!("input {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_holding = verdicts.iter().filter(|v| v.holds(args.rel_tol)).count();
    let report = TheoremReport {
        n_inputs: verdicts.len(),
        n_holding,
        rel_tol: args.rel_tol,
        verdicts,
    };
    prepare_out(&args.out)?;
    let path = write_json(&args.out, "theorem.json", &report)?;
    if n_holding < report.n_inputs {
        bail!(
            "inequality violated at {} of {} inputs; see {}",
            report.n_inputs - n_holding,
            report.n_inputs,
            path.display()
        );
    }
    Ok(path)
}

/// Trains the spec's model on its (training) dataset; writes
/// `records.csv`, `model.json` and the canonical `spec.json`.
pub fn train(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let (data, _) = build_dataset(&spec.dataset)?;
    let mlp = spec.model.build(data.input_dim(), data.output_dim(), spec.model.init_seed)?;
    let (model, records) = sgd_train(mlp, &data, &spec.train_config, &mut ())?;
    prepare_out(out)?;
    write(out, "spec.json", &(canonical_spec(spec) + "\n"))?;
    write(out, "records.csv", &records_to_csv(&records))?;
    write(out, "model.json", &(model.to_json() + "\n"))?;
    Ok(())
}

/// Runs the 1-D study; writes snapshots under `snapshots/`, plus
/// `records.csv`, `summary.json`, `model.json`, `data.json` and `spec.json`.
pub fn regress1d(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let outcome = run_regression_1d(spec)?;
    prepare_out(out)?;
    let snap_dir = out.join("snapshots");
    prepare_out(&snap_dir)?;
    for s in &outcome.snapshots {
        write(&snap_dir, &format!("step_{:06}.csv", s.step), &s.to_csv())?;
    }
    write(out, "spec.json", &(canonical_spec(spec) + "\n"))?;
    write(out, "records.csv", &records_to_csv(&outcome.records))?;
    write_json(out, "summary.json", &outcome.summary)?;
    write(out, "model.json", &(outcome.model.to_json() + "\n"))?;
    write(out, "data.json", &(outcome.dataset.to_json() + "\n"))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SweepSummary {
    pub n_rows: usize,
    pub n_diverged: usize,
    pub spearman_lr_vs_discrete_de: f64,
    pub spearman_lr_vs_slope: f64,
}

pub fn summarize_sweep(result: &SweepResult) -> SweepSummary {
    SweepSummary {
        n_rows: result.rows.len(),
        n_diverged: result.rows.iter().filter(|r| r.diverged).count(),
        spearman_lr_vs_discrete_de: result.lr_rank_correlation(|r| r.discrete_de_at_best),
        spearman_lr_vs_slope: result.lr_rank_correlation(|r| r.slope_at_best),
    }
}

/// Runs the learning-rate sweep; writes `sweep.csv`, `summary.json` and
/// `spec.json`.
pub fn sweep(spec: &ExperimentSpec, out: &Path) -> Result<SweepSummary> {
    let result = run_lr_sweep(spec)?;
    let summary = summarize_sweep(&result);
    prepare_out(out)?;
    write(out, "spec.json", &(canonical_spec(spec) + "\n"))?;
    write(out, "sweep.csv", &result.to_csv())?;
    write_json(out, "summary.json", &summary)?;
    Ok(summary)
}

/// Caps the global worker pool from `GEOMRAZOR_THREADS`, if set.
pub fn configure_threads(value: Option<&str>) -> Result<()> {
    let Some(v) = value else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| anyhow!("GEOMRAZOR_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")
}
