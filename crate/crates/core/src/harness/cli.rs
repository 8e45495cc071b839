//! Command-line interface.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use super::config::{ExperimentConfig, Mode};
use super::{resolve_workers, run_experiment_with_workers, tune_stepsize, Criterion, HarnessError};
use crate::libsvm;

#[derive(Parser, Debug)]
#[command(name = "shufflesgd", version, about = "SGD under data orderings: experiments, variance estimates and bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the output path from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; overrides the config and the environment.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CriterionArg {
    FirstPassage,
    FinalGradNorm,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Runs the experiment described by the config.
    Run(RunArgs),
    /// Picks the best stepsize from the config's grid for each strategy.
    Tune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "final-grad-norm")]
        criterion: CriterionArg,
    },
    /// Runs the config in variance-profile mode.
    Variance(RunArgs),
    /// Runs the config in bound-check mode; fails when a bound is violated.
    Check(RunArgs),
    /// Prints statistics of a LIBSVM file.
    ParseStats {
        path: PathBuf,
        /// Keep this many uniformly chosen rows first.
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(args: &RunArgs, mode: Option<Mode>) -> Result<(ExperimentConfig, usize), HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(m) = mode {
        cfg.mode = m;
        cfg.validate()?;
    }
    if let Some(out) = &args.output {
        cfg.output = std::env::current_dir()?.join(out);
    }
    let workers = match args.workers {
        Some(0) => return Err(HarnessError::Config("--workers must be at least 1".into())),
        Some(w) => w,
        None => resolve_workers(&cfg)?,
    };
    Ok((cfg, workers))
}

fn run_mode(args: &RunArgs, mode: Option<Mode>) -> Result<i32, HarnessError> {
    let (cfg, workers) = load(args, mode)?;
    let result = run_experiment_with_workers(&cfg, workers)?;
    result.write()?;
    for line in &result.summary {
        println!("{line}");
    }
    for (path, _) in &result.tables {
        println!("wrote {}", path.display());
    }
    if !result.diverged.is_empty() {
        eprintln!("{} cell(s) diverged", result.diverged.len());
    }
    Ok(match result.check_passed {
        Some(false) => 2,
        _ => 0,
    })
}

fn tune(args: &RunArgs, criterion: CriterionArg) -> Result<i32, HarnessError> {
    let (cfg, workers) = load(args, None)?;
    let criterion = match criterion {
        CriterionArg::FinalGradNorm => Criterion::FinalGradNorm,
        CriterionArg::FirstPassage => Criterion::FirstPassage {
            eps: cfg
                .eps
                .ok_or_else(|| HarnessError::Config("first-passage tuning needs eps in the config".into()))?,
        },
    };
    if cfg.gammas.is_empty() {
        return Err(HarnessError::Config("tuning needs a gamma grid".into()));
    }
    let p = cfg.build_problem(None)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let budget = cfg.epochs * p.num_components();
    println!("strategy,gamma,score,diverged,best");
    for s in cfg.parsed_strategies()? {
        let seed = super::cell_seed(cfg.seed, &s.id(), 0.0, 0);
        let r = pool.install(|| tune_stepsize(p.as_ref(), &s, &cfg.gammas, criterion, budget, cfg.repeats, seed, cfg.cadence.into()))?;
        for row in &r.table {
            println!("{s},{},{},{},{}", row.gamma, row.score, row.diverged, row.gamma == r.best_gamma);
        }
    }
    Ok(0)
}

fn parse_stats(path: &std::path::Path, subsample: Option<usize>, seed: u64) -> Result<i32, HarnessError> {
    let mut ds = libsvm::load(path).map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(m) = subsample {
        ds = ds.subsample(m, seed).map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    let s = libsvm::dataset_stats(&ds);
    println!("n={}", s.n);
    println!("d={}", s.d);
    println!("nnz={}", s.nnz);
    println!("positive_fraction={}", s.positive_fraction);
    println!("max_row_norm_sq={}", s.max_row_norm_sq);
    Ok(0)
}

/// Entry point shared by the binary and tests. Returns the process exit
/// code: 0 on success, 1 for usage or configuration errors, 2 for failures at
/// run time (including a violated bound in `check`).
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => run_mode(a, None),
        Command::Variance(a) => run_mode(a, Some(Mode::VarianceProfile)),
        Command::Check(a) => run_mode(a, Some(Mode::BoundCheck)),
        Command::Tune { run, criterion } => tune(run, *criterion),
        Command::ParseStats { path, subsample, seed } => parse_stats(path, *subsample, *seed),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
