use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 9] = [
    "features", "synth", "split", "tune", "train", "evaluate", "predict", "bench", "importance",
];

fn latproph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latproph"))
        .args(args)
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let o = latproph(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    o
}

fn repo_file(rel: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel).to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A two-family synth config that keeps the corpus small.
fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("synth.toml");
    std::fs::write(&path, "seed = 5\nn_models = 2\n").unwrap();
    path
}

/// synth, split and a small boosted model; returns the artifact directory.
fn pipeline(dir: &Path) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join("out");
    ok(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    let data = out.join("agx-like.csv");
    let plan = out.join("plan.json");
    ok(&["split", "--data", s(&data), "--seed", "3", "--out", s(&plan)]);
    ok(&[
        "train", "--data", s(&data), "--plan", s(&plan), "--kind", "gbt",
        "--set", "n_rounds=30", "--set", "max_depth=3", "--out", s(&out.join("gbt.lpk")),
    ]);
    out
}

#[test]
fn every_subcommand_has_documented_help() {
    let top = ok(&["--help"]);
    let text = String::from_utf8(top.stdout).unwrap();
    for sub in SUBCOMMANDS {
        assert!(text.contains(sub), "top-level help lacks {sub}");
        let o = ok(&[sub, "--help"]);
        let help = String::from_utf8(o.stdout).unwrap();
        let options = help.split("Options:").nth(1).expect("options section");
        let lines: Vec<&str> = options.lines().collect();
        for (i, line) in lines.iter().enumerate() {
            let t = line.trim_start();
            if !(t.starts_with("--") || t.starts_with("-h")) {
                continue;
            }
            // Flag and value placeholder, then at least two spaces and text,
            // or the description on the following line.
            let same_line = t.split_once("  ").is_some_and(|(_, d)| !d.trim().is_empty());
            let next_line = lines.get(i + 1).is_some_and(|n| n.starts_with("          ") && !n.trim().is_empty());
            assert!(same_line || next_line, "{sub}: undocumented flag line '{line}'");
        }
    }
}

#[test]
fn version_exits_zero() {
    let o = ok(&["--version"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("latproph"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = latproph(&["split", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_fold_tuning_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline(dir.path());
    let o = latproph(&[
        "tune", "--data", s(&out.join("agx-like.csv")), "--kind", "ols", "--k", "1",
        "--out", s(&dir.path().join("x.lpk")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("K-fold"), "{err}");
    assert!(err.contains("latproph tune"), "{err}");
}

#[test]
fn missing_input_file_is_a_user_error() {
    let o = latproph(&["split", "--data", "/nonexistent/data.csv", "--out", "/tmp/never.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/data.csv"));
}

#[test]
fn predict_prints_one_positive_latency() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline(dir.path());
    let o = ok(&[
        "predict", "--model", s(&out.join("gbt.lpk")), "--graph", &repo_file("docs/graphs/resnet50.cnn"),
        "--input-size", "224",
    ]);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    let value: f64 = lines[0].split([',', ' ', '\t']).filter_map(|t| t.parse().ok()).last().expect("a number");
    assert!(value > 0.0 && value.is_finite());
}

#[test]
fn evaluate_and_importance_run_on_a_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = pipeline(dir.path());
    let report = dir.path().join("report.csv");
    ok(&[
        "evaluate", "--model", s(&out.join("gbt.lpk")), "--data", s(&out.join("agx-like.csv")),
        "--plan", s(&out.join("plan.json")), "--out", s(&report),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 4, "{text}");
    for space in ["NIS", "NCV", "NCA"] {
        assert!(text.contains(space));
    }
    ok(&["importance", "--model", s(&out.join("gbt.lpk"))]);
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, ob) = (pipeline(a.path()), pipeline(b.path()));
    for name in ["agx-like.csv", "tx2-like.csv", "plan.json", "gbt.lpk"] {
        let x = std::fs::read(oa.join(name)).unwrap();
        let y = std::fs::read(ob.join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}
