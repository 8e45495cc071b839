mod common;

use std::path::Path;
use std::process::Command;

use common::*;
use shufflesgd::harness::cli::cli_main;

const SMALL: &str = r#"
mode = "convergence"
seed = 1
output = "out/conv.csv"
strategies = ["sgd", "rr"]
gammas = [0.01, 0.1]
epochs = 5
repeats = 3

[problem]
kind = "quadratic"
d = 3
n = 6
sigma_sgd_sq = 0.2
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn cli(args: &[&str]) -> i32 {
    cli_main(std::iter::once("shufflesgd").chain(args.iter().copied()))
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["--version"]), 0);
    assert_eq!(cli(&[]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&["run", "--config", "x.toml", "--bogus"]), 1);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["run", "--config", dir.path().join("missing.toml").to_str().unwrap()]), 1);
    let bad = write_config(dir.path(), "bad.toml", &SMALL.replace("seed = 1", "seed = 1\nbogus = 2"));
    assert_eq!(cli(&["run", "--config", &bad]), 1);
    let neg = write_config(dir.path(), "neg.toml", &SMALL.replace("[0.01, 0.1]", "[0.01, -0.1]"));
    assert_eq!(cli(&["run", "--config", &neg]), 1);
    // 0.1 exceeds the admissible stepsize for L = 1
    let check = write_config(dir.path(), "check.toml", SMALL);
    assert_eq!(cli(&["check", "--config", &check]), 1);
    assert_eq!(cli(&["run", "--config", &check, "--workers", "0"]), 1);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn run_writes_tables_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    assert_eq!(cli(&["run", "--config", &cfg]), 0);
    let text = std::fs::read_to_string(dir.path().join("out/conv.csv")).unwrap();
    assert!(text.starts_with("# schema=shufflesgd/convergence/v1\n# config_sha256="));
    assert!(text.contains("\nstrategy,gamma,seed,epoch,grad_norm,fval\n"));
    // 2 strategies × 2 stepsizes × 3 repeats × epochs 0..=5
    let rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 2 * 2 * 3 * 6);
    assert!(dir.path().join("out/conv.summary.csv").exists());
}

#[test]
fn check_and_variance_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("[0.01, 0.1]", "[0.01, 0.05]").replace("repeats = 3", "repeats = 30\ntau_list = [1, 3, 6, 12]");
    let cfg = write_config(dir.path(), "c.toml", &text);
    assert_eq!(cli(&["check", "--config", &cfg]), 0);
    let out = std::fs::read_to_string(dir.path().join("out/conv.csv")).unwrap();
    assert!(out.contains("# schema=shufflesgd/bound_check/v1"));
    assert!(out.contains("\nstrategy,gamma,seed,check,t,lhs,rhs,ratio\n"));
    assert_eq!(cli(&["variance", "--config", &cfg]), 0);
    let out = std::fs::read_to_string(dir.path().join("out/conv.csv")).unwrap();
    assert!(out.contains("\nstrategy,tau,sigma_hat_sq,ci_halfwidth,bound_value,num_samples\n"));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    // nine components are too many to enumerate 9! orderings
    let text = SMALL
        .replace("n = 6", "n = 9")
        .replace("\"sgd\", \"rr\"", "\"ss\"")
        .replace("repeats = 3", "tau_list = [2]\nsampling = \"exhaustive\"");
    let cfg = write_config(dir.path(), "v.toml", &text);
    assert_eq!(cli(&["variance", "--config", &cfg]), 2);
    let tune = write_config(dir.path(), "t.toml", &SMALL.replace("[0.01, 0.1]", "[50.0, 80.0]"));
    assert_eq!(cli(&["tune", "--config", &tune]), 2);
}

#[test]
fn binary_reports_dataset_statistics() {
    let out = Command::new(env!("CARGO_BIN_EXE_shufflesgd"))
        .args(["parse-stats", data_path("w1a_style.txt").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("n=500\nd=300\n"));

    let out = Command::new(env!("CARGO_BIN_EXE_shufflesgd"))
        .args(["parse-stats", "--subsample", "20", data_path("australian_style.txt").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("n=20\n"));

    let out = Command::new(env!("CARGO_BIN_EXE_shufflesgd")).arg("--nope").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn tune_prints_a_score_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.toml", SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_shufflesgd"))
        .args(["tune", "--config", &cfg, "--workers", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("strategy,gamma,score,diverged,best\n"));
    assert_eq!(text.lines().filter(|l| l.ends_with(",true")).count(), 2);
}

#[test]
fn shipped_configs_parse() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = shufflesgd::harness::ExperimentConfig::load(&path).unwrap();
        cfg.build_problem(None).unwrap();
    }
}
