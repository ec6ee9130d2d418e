//! End-to-end runs of the `affine-he` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affine-he"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn example5_prints_reference_matrices() {
    let o = run(&["example5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("-1 0 0 1 0 0"));
    assert!(text.contains("0 1 0 0 1 0"));
    assert!(text.contains("h = 2"));
}

#[test]
fn two_agent_simulation_converges_in_one_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["simulate", "--n", "2", "--preset", "tiny", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("Converged { round: 1 }"), "{text}");
    // the leader sits on the fixed point up to one quantization step of b
    let rows = csv_rows(&dir.path().join("transcript.csv"));
    let last = rows.last().unwrap();
    let dev: f64 = last[4].parse().unwrap();
    assert!(dev <= 0.5e-6, "{dev}");
    for f in [
        "trajectory.csv",
        "transcript.csv",
        "messages.csv",
        "summary.txt",
        "graph.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn reset_kinds_share_the_schedule_but_not_the_trajectory() {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for (d, kind) in dirs.iter().zip(["soft", "hard"]) {
        let o = run(&[
            "simulate",
            "--preset",
            "tiny",
            "--seed",
            "4",
            "--reset",
            kind,
            "--term-eps",
            "1e-300",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let phases = |d: &Path| -> Vec<(String, String)> {
        csv_rows(&d.join("transcript.csv"))
            .into_iter()
            .skip(1)
            .filter(|r| r[2] == "1")
            .map(|r| (r[0].clone(), r[5].clone()))
            .collect()
    };
    let (soft, hard) = (phases(dirs[0].path()), phases(dirs[1].path()));
    assert_eq!(soft, hard);
    let soft_t = fs::read(dirs[0].path().join("transcript.csv")).unwrap();
    let hard_t = fs::read(dirs[1].path().join("transcript.csv")).unwrap();
    assert_ne!(soft_t, hard_t);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "n = 6\nk-iter = 4\nrounds = 2\nq-bits = 512\nreset = \"hard\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("n = 7"), "{text}");
    assert!(text.contains("k_iter = 4"), "{text}");
    assert!(text.contains("reset = hard"), "{text}");
}

#[test]
fn bench_writes_seeded_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "bench",
        "--cases",
        "3",
        "--n",
        "12",
        "--seed",
        "9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("bench.csv"));
    assert_eq!(rows.len(), 1 + 6);
    assert_eq!(rows[0][0], "case");
    assert!(rows[1..].iter().all(|r| r[2] == "12"));
}

#[test]
fn invalid_settings_are_rejected_with_a_reason() {
    for (args, needle) in [
        (vec!["simulate", "--preset", "huge"], "unknown preset"),
        (
            vec!["simulate", "--reset", "medium"],
            "--reset must be soft or hard",
        ),
        (vec!["simulate", "--backend", "rsa"], "unknown backend"),
        (vec!["simulate", "--n", "6", "--k-iter", "0"], "k_iter"),
        (vec!["bench", "--cases", "0"], "n_cases"),
        (vec!["bench", "--reset", "hard"], "no effect"),
    ] {
        let o = run(&args);
        assert!(!o.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{args:?}: {err}");
    }
}
