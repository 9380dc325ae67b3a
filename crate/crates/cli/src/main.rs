use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use geomrazor::polytope::PolytopeMode;
use geomrazor_cli::{
    check_theorem, configure_threads, emit_plot, measure, parse_spec, regress1d, sweep, train, CheckTheoremArgs,
    MeasureArgs,
};

/// Geometric complexity measurements and experiments for small MLPs.
#[derive(Debug, Parser)]
#[command(name = "geomrazor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Complexity measures of a checkpoint on a dataset.
    Measure {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// auto, interval, box or hull
        #[arg(long, default_value = "auto", value_parser = parse_mode)]
        polytope: PolytopeMode,
        /// Monte Carlo samples for 2-D and higher inputs.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Grid segments for 1-D inputs.
        #[arg(long, default_value_t = 4096)]
        segments: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Checks the input/parameter gradient inequality at each input.
    CheckTheorem {
        #[arg(long)]
        model: PathBuf,
        /// JSON array of input vectors.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long, default_value_t = geomrazor::theorem::DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        output_index: usize,
        #[arg(long, default_value_t = 1e-9)]
        rel_tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a model from a spec.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs the 1-D interpolation study.
    Regress1d {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs a learning-rate sweep.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plots CSV columns to an SVG file.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: String,
        /// Comma-separated column names.
        #[arg(long, value_delimiter = ',', required = true)]
        y: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<PolytopeMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown polytope mode {s:?}; expected auto, interval, box or hull"))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    configure_threads(std::env::var("GEOMRAZOR_THREADS").ok().as_deref())?;
    Ok(match cli.command {
        Command::Measure {
            model,
            data,
            out,
            polytope,
            samples,
            segments,
            seed,
        } => {
            let path = measure(&MeasureArgs {
                model,
                data,
                out,
                polytope,
                samples,
                segments,
                seed,
            })?;
            serde_json::json!({ "report": path })
        }
        Command::CheckTheorem {
            model,
            inputs,
            eps,
            output_index,
            rel_tol,
            out,
        } => {
            let path = check_theorem(&CheckTheoremArgs {
                model,
                inputs,
                out,
                eps,
                output_index,
                rel_tol,
            })?;
            serde_json::json!({ "report": path })
        }
        Command::Train { spec, out } => {
            train(&parse_spec(&spec)?, &out)?;
            serde_json::json!({ "out": out })
        }
        Command::Regress1d { spec, out } => {
            regress1d(&parse_spec(&spec)?, &out)?;
            serde_json::json!({ "out": out })
        }
        Command::Sweep { spec, out } => {
            let summary = sweep(&parse_spec(&spec)?, &out)?;
            serde_json::to_value(summary)?
        }
        Command::Plot { csv, x, y, out } => {
            emit_plot(&csv, &x, &y, &out)?;
            serde_json::json!({ "svg": out })
        }
    })
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim().to_string()),
    };
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail("runtime", format!("{e:#}")),
    }
}
