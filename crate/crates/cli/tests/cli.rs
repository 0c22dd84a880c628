//! End-to-end runs of the `nlbbpp` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlbbpp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlbbpp"))
        .args(args)
        .env_remove("NLBBPP_OUT")
        .env_remove("NLBBPP_JOBS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn run_config(dir: &Path, body: &str) -> Output {
    let cfg = dir.join("experiment.toml");
    fs::write(&cfg, body).unwrap();
    let out = dir.join("out");
    nlbbpp(&["--out", out.to_str().unwrap(), "run", cfg.to_str().unwrap()])
}

const SOLVE: &str = r#"
[model]
cells = [2]
n_max = 2

[marginals]
p = { kind = "poisson", c = 1.0 }
q = { kind = "random", seed = 4 }

[[task]]
kind = "solve"
p = "p"
q = "q"
k = 16
refinement = [8, 16]

[[task]]
kind = "interpolate"
p = "p"
q = "q"
k = 16

[[task]]
kind = "flow"
p = "q"
steps = 4
"#;

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = run_config(dir.path(), "[model]\ncells = [1]\nn_max = 2\n");
    assert_eq!(code(&empty), 2);
    let unknown = run_config(dir.path(), &SOLVE.replace("n_max = 2", "n_max = 2\ncolour = 3"));
    assert_eq!(code(&unknown), 2);
    let missing = run_config(dir.path(), &SOLVE.replace("q = \"q\"", "q = \"r\""));
    assert_eq!(code(&missing), 2);
}

#[test]
fn oversized_space_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(
        dir.path(),
        &SOLVE
            .replace("cells = [2]", "cells = [40]")
            .replace("n_max = 2", "n_max = 30"),
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn runs_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut listings = Vec::new();
    for round in 0..2 {
        let sub = dir.path().join(round.to_string());
        fs::create_dir(&sub).unwrap();
        let out = run_config(&sub, SOLVE);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(sub.join("out"))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        listings.push(files);
    }
    let names: Vec<&str> = listings[0].iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"config.toml"));
    assert!(names.contains(&"00-solve-action_vs_k.csv"));
    assert!(names.contains(&"02-flow-fisher.csv"));
    assert_eq!(listings[0], listings[1]);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_nlbbpp"))
        .args([
            "sweep",
            "--poisson",
            "1",
            "--nmax",
            "4",
            "--intensities",
            "0.5,2",
            "--K",
            "8",
        ])
        .env("NLBBPP_OUT", dir.path())
        .env("NLBBPP_JOBS", "2")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("00-sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("intensity,w0_squared"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn verify_status_reflects_the_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let ok = nlbbpp(&[
        "--out",
        out_dir,
        "verify",
        "--suite",
        "debruijn,logsobolev",
        "--preset",
        "tiny",
    ]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let report = fs::read_to_string(dir.path().join("00-verify.csv")).unwrap();
    assert!(report.starts_with("name,window,left,right,slack,tol,pass"));

    let bad = nlbbpp(&[
        "--out", out_dir, "verify", "--suite", "nosuch", "--preset", "tiny",
    ]);
    assert_eq!(code(&bad), 2);
}

#[test]
fn golden_files_match_the_solver() {
    let golden = concat!(env!("CARGO_MANIFEST_DIR"), "/../../golden");
    let out = nlbbpp(&["golden", "--dir", golden]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(code(&out), 0, "{stdout}");
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 5);

    let dir = tempfile::tempdir().unwrap();
    let missing = nlbbpp(&["golden", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&missing), 2);
}
