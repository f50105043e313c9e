use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn absa(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_absa"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

const FAST: &[&str] = &["--learn-episodes", "20000", "--cc-episodes", "2000", "--eval-episodes", "100"];

fn sweep_args(out: &str) -> Vec<&str> {
    let mut args = vec!["sweep", "--scheme", "absa2", "--budget", "3", "--d", "1,2,3", "--seeds", "5", "--out", out];
    args.extend_from_slice(FAST);
    args
}

#[test]
fn sweep_yields_fifteen_runs_in_one_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = stdout_json(&absa(&sweep_args("sw"), dir.path()));
    assert_eq!(report["runs"], 15);

    let mut reader = csv::Reader::from_path(dir.path().join("sw/metrics.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["scheme", "budget", "d", "seed", "metric", "value"]
    );
    let runs: BTreeSet<(String, String)> = reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[2].to_string(), r[3].to_string())
        })
        .collect();
    assert_eq!(runs.len(), 15);
    let summary: Value = serde_json::from_slice(&fs::read(dir.path().join("sw/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 15);
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            files.extend(files_under(&path));
        } else {
            files.push(path);
        }
    }
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let (first, second) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut args = vec!["sweep", "--scheme", "absa2", "--budget", "2,3", "--d", "2", "--seeds", "0,7", "--out", "sw"];
    args.extend_from_slice(FAST);
    stdout_json(&absa(&args, first.path()));
    stdout_json(&absa(&args, second.path()));
    let (a, b) = (files_under(&first.path().join("sw")), files_under(&second.path().join("sw")));
    assert_eq!(a.len(), b.len());
    assert!(a.len() > 40);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.strip_prefix(first.path()), y.strip_prefix(second.path()));
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }

    let eval = |out: &str| {
        stdout_json(&absa(
            &["eval", "--policy", "sw/absa2_b3_d2_s7", "--episodes", "300", "--seed", "11", "--out", out],
            first.path(),
        ))
    };
    assert_eq!(eval("e1.json"), eval("e2.json"));
    assert_eq!(
        fs::read(first.path().join("e1.json")).unwrap(),
        fs::read(first.path().join("e2.json")).unwrap()
    );
}

#[test]
fn eval_reports_mean_and_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "--scheme", "absa1", "--budget", "25", "--controller", "induced", "--seed", "0", "--out", "r"];
    args.extend_from_slice(FAST);
    let report = stdout_json(&absa(&args, dir.path()));
    let manifest = report["manifest"].as_str().unwrap().to_string();
    let oracle = report["summary"]["oracle_return"].as_f64().unwrap();

    let ev = stdout_json(&absa(
        &["eval", "--policy", &manifest, "--episodes", "1000", "--seed", "3", "--log", "log.jsonl"],
        dir.path(),
    ));
    assert_eq!(ev["episodes"], 1000);
    assert!(ev["stderr"].as_f64().unwrap() > 0.0);
    // Lossless: the exact uniform-start return is the oracle's.
    assert!((ev["exact_return"].as_f64().unwrap() - oracle).abs() < 1e-9);
    let mean = ev["mean"].as_f64().unwrap();
    assert!((mean - oracle).abs() < 4.0 * ev["stderr"].as_f64().unwrap());

    let m = stdout_json(&absa(&["metrics", "--log", "log.jsonl"], dir.path()));
    assert_eq!(m["episodes"], 1000);
    let tri = m["metrics"]["tri"]["mean"].as_f64().unwrap();
    assert!(tri > 1.0, "lossless codewords carry the optimal action: {tri}");
}

#[test]
fn stages_write_their_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut solve = vec!["solve", "--scheme", "absa2", "--seed", "1", "--out", "s"];
    solve.extend_from_slice(FAST);
    let s = stdout_json(&absa(&solve, dir.path()));
    assert!((s["pi_star_return"].as_f64().unwrap() - s["oracle_return"].as_f64().unwrap()).abs() < 1e-9);
    assert!(dir.path().join("s/q_star.csv").exists());

    let mut quantize = vec!["quantize", "--scheme", "absa2", "--budget", "2/3", "--seed", "1", "--out", "q"];
    quantize.extend_from_slice(FAST);
    let q = stdout_json(&absa(&quantize, dir.path()));
    let books = q["codebooks"].as_array().unwrap();
    assert_eq!(books.len(), 2);
    assert_eq!(books[0]["budget"], 2);
    assert_eq!(books[1]["budget"], 3);

    let mut train = vec!["train-cc", "--scheme", "absa2", "--d", "2", "--seed", "1", "--out", "t"];
    train.extend_from_slice(FAST);
    let t = stdout_json(&absa(&train, dir.path()));
    assert_eq!(t["training_episodes"], 2000);
    assert!(dir.path().join(t["manifest"].as_str().unwrap()).exists());
}

#[test]
fn config_files_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("exp.toml"),
        "scheme = \"hoc\"\neval_episodes = 50\n[grid]\nwidth = 8\nheight = 8\ngoal_cells = [22]\nc1 = 1.0\nc2 = 10.0\ngamma = 0.9\nhorizon = 100\n",
    )
    .unwrap();
    let r = stdout_json(&absa(&["run", "--config", "exp.toml", "--seed", "2", "--out", "o"], dir.path()));
    assert_eq!(r["summary"]["key"]["scheme"], "hoc");
    assert_eq!(r["summary"]["eval"]["n"], 50);
    let hnc = stdout_json(&absa(
        &["run", "--config", "exp.toml", "--scheme", "hnc", "--seed", "2", "--out", "o"],
        dir.path(),
    ));
    assert_eq!(hnc["metrics"]["positive_listening"]["mean"], 0.0);
}

#[test]
fn errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[(&[&str], u8, &str)] = &[
        // --seed is mandatory for stochastic subcommands.
        (&["run", "--scheme", "absa2"], 2, "usage"),
        (&["train-cc"], 2, "usage"),
        (&["eval", "--policy", "x"], 2, "usage"),
        (&["run", "--seed", "1", "--config", "a.toml", "--profile", "desk"], 2, "usage"),
        (&["sweep", "--seeds", "2", "--bogus"], 2, "usage"),
        (&["run", "--seed", "1", "--budget", "9", "--bit-budget", "3"], 1, "config"),
        (&["run", "--seed", "1", "--scheme", "absa1", "--budget", "2", "--controller", "induced"], 1, "quantizer"),
        (&["eval", "--policy", "missing", "--seed", "1"], 1, "io"),
    ];
    for (args, code, category) in cases {
        let out = absa(args, dir.path());
        assert_eq!(out.status.code(), Some(*code as i32), "{args:?}");
        assert_eq!(stderr_json(&out)["error"]["category"], *category, "{args:?}");
    }
    let help = absa(&["--help"], dir.path());
    assert!(help.status.success());
}
