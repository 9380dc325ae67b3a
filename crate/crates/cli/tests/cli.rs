use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geomrazor_cli::plot::{render_svg, Series};
use geomrazor_cli::{canonical_spec, emit_plot, parse_spec_str};

const MINIMAL: &str = r#"{
  "name": "tiny",
  "dataset": {"generator": "regression1d", "n_points": 6, "x_range": [-1.0, 1.0], "kind": "fixed_seeded", "seed": 3},
  "model": {"hidden_widths": [8], "activation": "tanh", "init_seed": 1},
  "train_config": {"learning_rate": 0.05, "steps": 40, "batch_size": 3}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geomrazor"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("GEOMRAZOR_THREADS").output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

#[test]
fn minimal_spec_gets_defaults() {
    let spec = parse_spec_str(MINIMAL).unwrap();
    assert_eq!(spec.train_config.track_every, 100);
    assert_eq!(spec.train_config.seed, 0);
    assert!(spec.sweep.is_none());
    assert!(spec.snapshot_steps.is_none());
}

#[test]
fn negative_learning_rate_names_the_field() {
    let bad = MINIMAL.replace("0.05", "-0.05");
    let err = parse_spec_str(&bad).unwrap_err().to_string();
    assert!(err.contains("train_config.learning_rate"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let bad = MINIMAL.replace("\"name\": \"tiny\",", "\"name\": \"tiny\", \"colour\": 1,");
    assert!(parse_spec_str(&bad).is_err());
    let bad = MINIMAL.replace("\"steps\": 40", "\"steps\": 40, \"momentum\": 0.9");
    let err = parse_spec_str(&bad).unwrap_err().to_string();
    assert!(err.contains("train_config"), "{err}");
}

#[test]
fn wrong_type_names_the_field() {
    let bad = MINIMAL.replace("\"steps\": 40", "\"steps\": \"forty\"");
    let err = parse_spec_str(&bad).unwrap_err().to_string();
    assert!(err.contains("train_config.steps"), "{err}");
}

#[test]
fn canonical_round_trip_is_stable() {
    let spec = parse_spec_str(MINIMAL).unwrap();
    let once = canonical_spec(&spec);
    let again = parse_spec_str(&once).unwrap();
    assert_eq!(spec, again);
    assert_eq!(once, canonical_spec(&again));
}

#[test]
fn two_point_series_is_one_polyline_with_two_coordinates() {
    let svg = render_svg(
        &[Series {
            name: "y".into(),
            points: vec![(0.0, 0.0), (1.0, 1.0)],
        }],
        "x",
    );
    assert_eq!(svg.matches("<polyline").count(), 1);
    let line = svg.lines().find(|l| l.contains("<polyline")).unwrap();
    let pts = line.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    assert_eq!(pts.split_whitespace().count(), 2);
}

#[test]
fn plot_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    fs::write(&csv, "step,a,b\n0,1.0,2.0\n10,0.5,1.5\n20,0.25,\n").unwrap();
    let ys = vec!["a".to_string(), "b".to_string()];
    let (p1, p2) = (dir.path().join("1.svg"), dir.path().join("2.svg"));
    emit_plot(&csv, "step", &ys, &p1).unwrap();
    emit_plot(&csv, "step", &ys, &p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn empty_csv_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("e.csv");
    fs::write(&csv, "x,y\n").unwrap();
    assert!(emit_plot(&csv, "x", &["y".into()], &dir.path().join("e.svg")).is_err());
    assert!(!dir.path().join("e.svg").exists());
}

#[test]
fn missing_column_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    fs::write(&csv, "x,y\n1,2\n").unwrap();
    let err = emit_plot(&csv, "x", &["z".into()], &dir.path().join("m.svg")).unwrap_err();
    assert!(err.to_string().contains('z'));
}

#[test]
fn sweep_csv_plots_one_marker_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let mut text = String::from(
        "learning_rate,seed,best_val_accuracy,step_of_best,discrete_de_at_best,slope_at_best,diverged\n",
    );
    for (i, lr) in [0.01, 0.02, 0.05].iter().enumerate() {
        for seed in 0..2 {
            text += &format!("{lr},{seed},0.9,{},{},{},false\n", 100 * i, 1.0 - 0.1 * i as f64, 0.01 * seed as f64);
        }
    }
    fs::write(&csv, text).unwrap();
    let svg_path = dir.path().join("sweep.svg");
    emit_plot(&csv, "learning_rate", &["discrete_de_at_best".into()], &svg_path).unwrap();
    let svg = fs::read_to_string(&svg_path).unwrap();
    assert_eq!(svg.matches("<circle").count(), 6);
}

#[test]
fn train_writes_only_under_out_and_leaves_inputs_alone() {
    let work = tempfile::tempdir().unwrap();
    let spec = work.path().join("spec.json");
    fs::write(&spec, MINIMAL).unwrap();
    let before = snapshot(work.path());
    let out = work.path().join("run");
    let o = run(&["train", "--spec", s(&spec), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice::<serde_json::Value>(&o.stdout).expect("stdout is JSON");
    let after = snapshot(work.path());
    for (p, bytes) in &before {
        assert_eq!(after.get(p), Some(bytes), "input {} changed", p.display());
    }
    for p in after.keys().filter(|p| !before.contains_key(*p)) {
        assert!(p.starts_with("run"), "wrote outside --out: {}", p.display());
    }
    for f in ["spec.json", "records.csv", "model.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
}

#[test]
fn measure_and_check_theorem_on_a_trained_model() {
    let work = tempfile::tempdir().unwrap();
    let spec = work.path().join("spec.json");
    fs::write(&spec, MINIMAL.replace("\"steps\": 40", "\"steps\": 40, \"track_every\": 10")).unwrap();
    let run_dir = work.path().join("r");
    assert!(run(&["regress1d", "--spec", s(&spec), "--out", s(&run_dir)]).status.success());
    let (model, data) = (run_dir.join("model.json"), run_dir.join("data.json"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("summary.json")).unwrap()).unwrap();
    let ratio = summary["arc_to_chord_ratio"].as_f64().unwrap();
    assert!(ratio.is_finite() && ratio > 0.0);

    let m = work.path().join("m");
    let o = run(&["measure", "--model", s(&model), "--data", s(&data), "--out", s(&m), "--segments", "512"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(m.join("report.json")).unwrap()).unwrap();
    assert!(report["discrete_de"].as_f64().unwrap() >= 0.0);

    let inputs = work.path().join("inputs.json");
    fs::write(&inputs, "[[-0.5], [0.0], [0.7]]").unwrap();
    let t = work.path().join("t");
    let o = run(&["check-theorem", "--model", s(&model), "--inputs", s(&inputs), "--out", s(&t)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(t.join("theorem.json")).unwrap()).unwrap();
    assert_eq!(rep["n_inputs"], 3);
    assert_eq!(rep["n_holding"], 3);
}

#[test]
fn invalid_spec_exits_nonzero_with_json_error() {
    let work = tempfile::tempdir().unwrap();
    let spec = work.path().join("spec.json");
    fs::write(&spec, MINIMAL.replace("\"batch_size\": 3", "\"batch_size\": 0")).unwrap();
    let out = work.path().join("out");
    let o = run(&["train", "--spec", s(&spec), "--out", s(&out)]);
    assert!(!o.status.success());
    let e = error_json(&o);
    assert_eq!(e["error"]["kind"], "runtime");
    assert!(e["error"]["message"].as_str().unwrap().contains("train_config.batch_size"));
    assert!(!out.exists());
}

#[test]
fn usage_errors_are_json() {
    let o = run(&["train", "--spec"]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"]["kind"], "usage");
    let o = run(&["frobnicate"]);
    assert_eq!(error_json(&o)["error"]["kind"], "usage");
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let work = tempfile::tempdir().unwrap();
    let o = run(&["train", "--spec", s(&work.path().join("nope.json")), "--out", s(&work.path().join("o"))]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"]["kind"], "runtime");
}
