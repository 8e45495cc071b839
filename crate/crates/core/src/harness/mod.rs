//! Config-driven experiments and the command-line front end.
//!
//! An experiment expands into cells (strategy × stepsize × repeat, or
//! strategy × n for `tmin_vs_n`). Each cell derives its own seed from the
//! master seed, the strategy name, the bit pattern of the stepsize and the
//! repeat index, so results do not depend on grid order or worker count.
//! Cells run on a private rayon pool and are collected in grid order.

pub mod cli;
pub mod config;
pub mod output;
pub mod tune;

use std::path::PathBuf;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{ExperimentConfig, Mode, ProblemConfig};
pub use output::{strip_timestamp, Provenance, Table};
pub use tune::{tune_stepsize, Criterion, TuneResult, TuneRow};

use crate::bounds::{self, BoundsError};
use crate::engine::{self, Cadence, EngineError, IterateRecording, RecordPolicy};
use crate::ordering::{make_schedule, OrderingError, OrderingStrategy};
use crate::problems::FiniteSumProblem;
use crate::stats::MeanCi;
use crate::variance::{self, VarianceError, VarianceOptions};
use output::fmt_f64;

/// Overrides the worker count from the config.
pub const WORKERS_ENV: &str = "SHUFFLESGD_WORKERS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("tuning failed: {0}")]
    Tuning(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Variance(#[from] VarianceError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 for failures at
    /// run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Seed of one cell.
pub fn cell_seed(master: u64, strategy: &str, gamma: f64, repeat: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((strategy.len() as u64).to_le_bytes());
    h.update(strategy.as_bytes());
    h.update(gamma.to_bits().to_le_bytes());
    h.update(repeat.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub mode: Mode,
    /// Output files and their tables.
    pub tables: Vec<(PathBuf, Table)>,
    pub provenance: Provenance,
    /// `(strategy, gamma, seed)` of cells that diverged.
    pub diverged: Vec<(String, f64, u64)>,
    /// Outcome of `bound_check` mode.
    pub check_passed: Option<bool>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

impl ExperimentResult {
    pub fn render(&self, timestamp: Option<u64>) -> Vec<(PathBuf, String)> {
        self.tables
            .iter()
            .map(|(p, t)| (p.clone(), t.render(&self.provenance, timestamp)))
            .collect()
    }

    pub fn write(&self) -> Result<(), HarnessError> {
        let ts = output::now_unix();
        for (path, text) in self.render(Some(ts)) {
            output::write_atomic(&path, &text)?;
        }
        Ok(())
    }
}

/// Worker count: environment override, then config, then all cores.
pub fn resolve_workers(cfg: &ExperimentConfig) -> Result<usize, HarnessError> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(HarnessError::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        };
    }
    Ok(cfg
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let workers = resolve_workers(cfg)?;
    run_experiment_with_workers(cfg, workers)
}

pub fn run_experiment_with_workers(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    log::info!("running {} with {workers} workers", cfg.mode.name());
    pool.install(|| match cfg.mode {
        Mode::Convergence => convergence(cfg),
        Mode::TminVsN => tmin_vs_n(cfg),
        Mode::VarianceProfile => variance_mode(cfg),
        Mode::BoundCheck => bound_check(cfg),
    })
}

fn provenance(cfg: &ExperimentConfig) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    }
}

fn sibling(path: &std::path::Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

struct Cell {
    strategy: OrderingStrategy,
    gamma: f64,
    seed: u64,
}

fn cells(cfg: &ExperimentConfig, strategies: &[OrderingStrategy]) -> Vec<Cell> {
    let mut out = Vec::new();
    for s in strategies {
        for &gamma in &cfg.gammas {
            for r in 0..cfg.repeats {
                out.push(Cell {
                    strategy: s.clone(),
                    gamma,
                    seed: cell_seed(cfg.seed, &s.id(), gamma, r as u64),
                });
            }
        }
    }
    out
}

fn convergence(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let p = cfg.build_problem(None)?;
    let strategies = cfg.parsed_strategies()?;
    let n = p.num_components();
    let horizon = cfg.epochs * n;
    let policy = RecordPolicy {
        cadence: cfg.cadence.into(),
        iterates: IterateRecording::Summary,
        record_fvals: true,
    };
    let grid = cells(cfg, &strategies);
    let x0 = vec![0.0; p.dim()];
    let runs: Vec<Result<engine::Trajectory, EngineError>> = grid
        .par_iter()
        .map(|c| {
            let s = make_schedule(c.strategy.clone(), n, c.seed)?;
            engine::run(p.as_ref(), &s, c.gamma, horizon, &x0, policy)
        })
        .collect();

    let mut table = Table::new("convergence", vec!["strategy", "gamma", "seed", "epoch", "grad_norm", "fval"]);
    let mut summary = Table::new(
        "convergence_summary",
        vec!["strategy", "gamma", "repeats", "diverged", "mean_final_grad_norm", "ci_lo", "ci_hi", "median_final_grad_norm"],
    );
    let mut diverged = Vec::new();
    let mut lines = Vec::new();
    for (chunk_cells, chunk_runs) in grid.chunks(cfg.repeats).zip(runs.chunks(cfg.repeats)) {
        let mut finals = Vec::new();
        let mut n_div = 0;
        for (c, r) in chunk_cells.iter().zip(chunk_runs) {
            match r {
                Ok(tr) => {
                    for (&(t, g), &(_, f)) in tr.grad_norms.iter().zip(&tr.fvals) {
                        table.push(vec![
                            c.strategy.id(),
                            fmt_f64(c.gamma),
                            c.seed.to_string(),
                            fmt_f64(t as f64 / n as f64),
                            fmt_f64(g),
                            fmt_f64(f),
                        ]);
                    }
                    finals.push(tr.final_grad_norm());
                }
                Err(EngineError::Diverged { t }) => {
                    log::warn!("{} gamma={} seed={} diverged at t={t}", c.strategy, c.gamma, c.seed);
                    diverged.push((c.strategy.id(), c.gamma, c.seed));
                    n_div += 1;
                }
                Err(e) => return Err(e.clone().into()),
            }
        }
        let ci = MeanCi::from_samples(&finals);
        let c = &chunk_cells[0];
        summary.push(vec![
            c.strategy.id(),
            fmt_f64(c.gamma),
            chunk_cells.len().to_string(),
            n_div.to_string(),
            fmt_f64(ci.mean),
            fmt_f64(ci.lo()),
            fmt_f64(ci.hi()),
            fmt_f64(ci.median),
        ]);
        lines.push(format!(
            "{} gamma={}: mean final grad norm {:.6e} ± {:.2e} ({} diverged)",
            c.strategy, c.gamma, ci.mean, ci.half_width, n_div
        ));
    }
    let out = cfg.output_path();
    Ok(ExperimentResult {
        mode: cfg.mode,
        tables: vec![(sibling(&out, "summary"), summary), (out, table)],
        provenance: provenance(cfg),
        diverged,
        check_passed: None,
        summary: lines,
    })
}

fn tmin_vs_n(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let strategies = cfg.parsed_strategies()?;
    let eps = cfg.eps.expect("validated");
    let cadence: Cadence = cfg.cadence.into();
    let mut table = Table::new(
        "tmin_vs_n",
        vec!["strategy", "n", "mean_tmin", "ci_lo", "ci_hi", "censored_count", "median_tmin"],
    );
    let mut lines = Vec::new();
    for &n in &cfg.n_values {
        let p = cfg.build_problem(Some(n))?;
        let stats: Vec<Result<engine::TminStats, EngineError>> = strategies
            .par_iter()
            .map(|s| {
                let seed = cell_seed(cfg.seed, &s.id(), n as f64, 0);
                engine::iterations_to_accuracy(p.as_ref(), s, &cfg.gammas, eps, cfg.repeats, cfg.epochs * n, seed, cadence)
            })
            .collect();
        for (s, st) in strategies.iter().zip(stats) {
            let st = st?;
            let m = st.summary;
            table.push(vec![
                s.id(),
                n.to_string(),
                fmt_f64(m.mean),
                fmt_f64(m.lo()),
                fmt_f64(m.hi()),
                st.censored_count.to_string(),
                fmt_f64(m.median),
            ]);
            lines.push(format!("{s} n={n}: T_min {:.1} ± {:.1} ({} censored)", m.mean, m.half_width, st.censored_count));
        }
    }
    Ok(ExperimentResult {
        mode: cfg.mode,
        tables: vec![(cfg.output_path(), table)],
        provenance: provenance(cfg),
        diverged: Vec::new(),
        check_passed: None,
        summary: lines,
    })
}

fn probe_points(cfg: &ExperimentConfig, p: &dyn FiniteSumProblem) -> Result<Vec<Vec<f64>>, HarnessError> {
    let gamma = cfg
        .gammas
        .first()
        .copied()
        .unwrap_or_else(|| bounds::stepsize_limit(p.smoothness().max(f64::MIN_POSITIVE)));
    Ok(variance::probe_points_from_run(
        p,
        &OrderingStrategy::RandomReshuffle,
        gamma,
        cfg.epochs,
        cfg.probes,
        cfg.seed,
    )?)
}

fn variance_mode(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let p = cfg.build_problem(None)?;
    let strategies = cfg.parsed_strategies()?;
    let n = p.num_components();
    let probes = probe_points(cfg, p.as_ref())?;
    let sgd = variance::sigma_sgd_sq(p.as_ref(), &probes)?;
    let mut table = Table::new(
        "variance_profile",
        vec!["strategy", "tau", "sigma_hat_sq", "ci_halfwidth", "bound_value", "num_samples"],
    );
    table.notes.push(format!("n={n}"));
    table.notes.push(format!("sigma_sgd_sq={}", fmt_f64(sgd)));
    table.notes.push(format!("overlay n_sigma_sgd_sq={}", fmt_f64(n as f64 * sgd)));
    table.notes.push(format!("probe_points={}", probes.len()));
    let mut lines = vec![format!("sigma_sgd_sq = {sgd:.6e}, n * sigma_sgd_sq = {:.6e}", n as f64 * sgd)];
    for s in &strategies {
        let opts = VarianceOptions {
            num_orderings: cfg.num_orderings,
            seed: cell_seed(cfg.seed, &s.id(), 0.0, 0),
            mode: cfg.sampling.into(),
        };
        let prof = variance::variance_profile(p.as_ref(), s, &cfg.tau_list, &probes, opts)?;
        let epoch = variance::sigma_epoch_sq(p.as_ref(), s, &probes, opts)?;
        table.notes.push(format!("overlay sigma_epoch_sq[{s}]={}", fmt_f64(epoch.value)));
        let sigma_one = match s {
            OrderingStrategy::SingleFunction(j) => Some(variance::sigma_one_sq(p.as_ref(), *j, &probes)?),
            _ => None,
        };
        for (k, &tau) in prof.taus.iter().enumerate() {
            let bound = bounds::sigma_tau_bound(s, tau, n, sgd, sigma_one)
                .map(fmt_f64)
                .unwrap_or_default();
            table.push(vec![
                s.id(),
                tau.to_string(),
                fmt_f64(prof.sigma_hat_sq[k]),
                fmt_f64(prof.ci_half_widths[k]),
                bound,
                prof.num_samples.to_string(),
            ]);
        }
        if prof.deterministic_warning {
            log::warn!("{s} is deterministic; all {} samples coincide", cfg.num_orderings);
        }
        lines.push(format!("{s}: sigma_epoch_sq = {:.6e}", epoch.value));
    }
    Ok(ExperimentResult {
        mode: cfg.mode,
        tables: vec![(cfg.output_path(), table)],
        provenance: provenance(cfg),
        diverged: Vec::new(),
        check_passed: None,
        summary: lines,
    })
}

struct CheckOutcome {
    lemma: bounds::CheckReport,
    descent: bounds::CheckReport,
    traj: engine::Trajectory,
}

fn bound_check(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    let p = cfg.build_problem(None)?;
    let strategies = cfg.parsed_strategies()?;
    let n = p.num_components();
    let l = p.smoothness();
    for &g in &cfg.gammas {
        bounds::tau_from_stepsize(l, g).map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    let x0 = vec![0.0; p.dim()];
    let probes = probe_points(cfg, p.as_ref())?;
    let sgd = variance::sigma_sgd_sq(p.as_ref(), &probes)?;
    let f0 = bounds::initial_suboptimality(p.as_ref(), &x0, 100_000);
    let horizon = cfg.epochs * n;

    // Table bound, or an exact/empirical estimate for explicit orders
    let sigma_bound = |s: &OrderingStrategy, tau: usize| -> Result<f64, HarnessError> {
        let one = match s {
            OrderingStrategy::SingleFunction(j) => Some(variance::sigma_one_sq(p.as_ref(), *j, &probes)?),
            _ => None,
        };
        match bounds::sigma_tau_bound(s, tau, n, sgd, one) {
            Ok(b) => Ok(b),
            Err(BoundsError::Unsupported(_)) => {
                Ok(variance::estimate_sigma_tau(p.as_ref(), s, tau, &probes, VarianceOptions::default())?.value)
            }
            Err(e) => Err(e.into()),
        }
    };

    let grid = cells(cfg, &strategies);
    let outcomes: Vec<Result<CheckOutcome, HarnessError>> = grid
        .par_iter()
        .map(|c| {
            let tau = bounds::tau_from_stepsize(l, c.gamma)?;
            let s = make_schedule(c.strategy.clone(), n, c.seed)?;
            let traj = engine::run(p.as_ref(), &s, c.gamma, horizon, &x0, RecordPolicy::full())?;
            let lemma = bounds::lemma_consensus_check(&traj, p.as_ref(), c.gamma, tau)?;
            let descent = bounds::descent_bound_check(&traj, p.as_ref(), c.gamma, sigma_bound(&c.strategy, tau)?, f0)?;
            Ok(CheckOutcome { lemma, descent, traj })
        })
        .collect();

    let mut table = Table::new("bound_check", vec!["strategy", "gamma", "seed", "check", "t", "lhs", "rhs", "ratio"]);
    table.notes.push(format!("f0={}", fmt_f64(f0)));
    table.notes.push(format!("sigma_sgd_sq={}", fmt_f64(sgd)));
    let mut passed = true;
    let mut lines = Vec::new();
    let push_rows = |table: &mut Table, c: &Cell, seed: String, name: &str, rep: &bounds::CheckReport| {
        for r in &rep.rows {
            table.push(vec![
                c.strategy.id(),
                fmt_f64(c.gamma),
                seed.clone(),
                name.to_string(),
                r.t.to_string(),
                fmt_f64(r.lhs),
                fmt_f64(r.rhs),
                fmt_f64(r.ratio),
            ]);
        }
    };
    let mut outcomes = outcomes.into_iter();
    for group in grid.chunks(cfg.repeats) {
        let mut trajs = Vec::with_capacity(group.len());
        let mut lemma_max = 0.0f64;
        let mut descent_ok = true;
        for c in group {
            let o = outcomes.next().expect("one outcome per cell")?;
            lemma_max = lemma_max.max(o.lemma.max_ratio);
            passed &= o.lemma.passed;
            if o.descent.deterministic {
                descent_ok &= o.descent.passed;
            }
            push_rows(&mut table, c, c.seed.to_string(), "lemma", &o.lemma);
            push_rows(&mut table, c, c.seed.to_string(), "descent", &o.descent);
            trajs.push(o.traj);
        }
        let c = &group[0];
        let tau = bounds::tau_from_stepsize(l, c.gamma)?;
        let agg = bounds::descent_bound_aggregate(&trajs, p.as_ref(), c.gamma, sigma_bound(&c.strategy, tau)?, f0)?;
        if c.strategy.is_deterministic() || trajs.len() > 1 {
            descent_ok &= agg.passed;
        }
        push_rows(&mut table, c, "mean".into(), "descent_mean", &agg);
        passed &= descent_ok;
        lines.push(format!(
            "{} gamma={} tau={tau}: lemma max ratio {:.6e}, descent mean max ratio {:.6e} -> {}",
            c.strategy,
            c.gamma,
            lemma_max,
            agg.max_ratio,
            if descent_ok && lemma_max <= 1.0 + bounds::RATIO_SLACK { "ok" } else { "FAILED" }
        ));
    }
    Ok(ExperimentResult {
        mode: cfg.mode,
        tables: vec![(cfg.output_path(), table)],
        provenance: provenance(cfg),
        diverged: Vec::new(),
        check_passed: Some(passed),
        summary: lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text, Path::new("/nonexistent")).unwrap()
    }

    const QUAD: &str = r#"
[problem]
kind = "quadratic"
d = 3
n = 4
sigma_sgd_sq = 0.2
seed = 1
"#;

    #[test]
    fn cell_seed_depends_on_every_part() {
        let a = cell_seed(1, "rr", 0.1, 0);
        assert_eq!(a, cell_seed(1, "rr", 0.1, 0));
        assert_ne!(a, cell_seed(2, "rr", 0.1, 0));
        assert_ne!(a, cell_seed(1, "ss", 0.1, 0));
        assert_ne!(a, cell_seed(1, "rr", 0.2, 0));
        assert_ne!(a, cell_seed(1, "rr", 0.1, 1));
    }

    #[test]
    fn convergence_is_independent_of_workers() {
        let c = cfg(&format!(
            "mode = \"convergence\"\noutput = \"c.csv\"\nstrategies = [\"sgd\", \"rr\"]\ngammas = [0.05, 0.1]\nepochs = 5\nrepeats = 3\n{QUAD}"
        ));
        let a = run_experiment_with_workers(&c, 1).unwrap();
        let b = run_experiment_with_workers(&c, 3).unwrap();
        assert_eq!(a.render(None), b.render(None));
        assert_eq!(a.tables[1].1.rows.len(), 2 * 2 * 3 * 6);
    }

    #[test]
    fn divergent_cells_are_flagged() {
        let c = cfg(&format!(
            "mode = \"convergence\"\noutput = \"c.csv\"\nstrategies = [\"ig\"]\ngammas = [0.1, 50.0]\nepochs = 50\n{QUAD}"
        ));
        let r = run_experiment_with_workers(&c, 2).unwrap();
        assert_eq!(r.diverged.len(), 1);
        assert_eq!(r.diverged[0].1, 50.0);
    }

    #[test]
    fn bound_check_passes_on_small_quadratic() {
        let c = cfg(&format!(
            "mode = \"bound_check\"\noutput = \"b.csv\"\nstrategies = [\"ig\", \"rr\"]\ngammas = [0.02]\nepochs = 4\nrepeats = 2\n{QUAD}"
        ));
        let r = run_experiment_with_workers(&c, 2).unwrap();
        assert_eq!(r.check_passed, Some(true), "{:?}", r.summary);
    }

    #[test]
    fn inadmissible_check_stepsize_is_a_config_error() {
        let c = cfg(&format!(
            "mode = \"bound_check\"\noutput = \"b.csv\"\nstrategies = [\"ig\"]\ngammas = [0.5]\n{QUAD}"
        ));
        let err = run_experiment_with_workers(&c, 1).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn variance_mode_reports_bounds() {
        let c = cfg(&format!(
            "mode = \"variance_profile\"\noutput = \"v.csv\"\nstrategies = [\"ss\", \"single:2\"]\ntau_list = [1, 2, 4, 8]\n{QUAD}"
        ));
        let r = run_experiment_with_workers(&c, 2).unwrap();
        let t = &r.tables[0].1;
        assert_eq!(t.rows.len(), 8);
        for row in &t.rows {
            let est: f64 = row[2].parse().unwrap();
            let bound: f64 = row[4].parse().unwrap();
            assert!(est <= bound * (1.0 + 1e-9), "{row:?}");
        }
    }

    #[test]
    fn tmin_mode_table() {
        let c = cfg(&format!(
            "mode = \"tmin_vs_n\"\noutput = \"t.csv\"\nstrategies = [\"rr\"]\ngammas = [0.1, 0.3]\nepochs = 200\nrepeats = 4\neps = 0.05\nn_values = [2, 4]\n{QUAD}"
        ));
        let r = run_experiment_with_workers(&c, 2).unwrap();
        let t = &r.tables[0].1;
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[1][1], "4");
    }
}
