//! Constant-stepsize SGD, `x_{t+1} = x_t − γ ∇f_{i_t}(x_t)`.
//!
//! A run of horizon `T` performs `T` updates with indices `i_0 … i_{T−1}` and
//! produces the iterates `x_0 … x_T`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::ordering::{make_schedule, OrderingError, OrderingStrategy, Schedule};
use crate::problems::{FiniteSumProblem, ProblemError};
use crate::rng::{self, Domain};
use crate::stats::MeanCi;

/// Iterates with a norm above this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("iterate diverged at t = {t}")]
    Diverged { t: usize },
    #[error("stepsize must be positive and finite, got {0}")]
    Stepsize(f64),
    #[error("schedule has n = {schedule}, problem has n = {problem}")]
    ComponentCount { schedule: usize, problem: usize },
    #[error("trajectory was recorded in summary mode and cannot be replayed")]
    NotReplayable,
    #[error("invalid argument: {0}")]
    Parameter(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
}

/// When the full gradient norm is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cadence {
    PerEpoch,
    PerIteration,
    Every(usize),
}

impl Cadence {
    pub fn period(self, n: usize) -> usize {
        match self {
            Cadence::PerEpoch => n,
            Cadence::PerIteration => 1,
            Cadence::Every(k) => k.max(1),
        }
    }
}

/// Which iterates are kept in memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IterateRecording {
    /// Every `x_t`.
    Full,
    /// `x_t` at multiples of `n`.
    EpochBoundaries,
    /// `x_t` at multiples of `k`.
    Every(usize),
    /// Only `x_0` and `x_T`; the run cannot be replayed.
    Summary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordPolicy {
    pub cadence: Cadence,
    pub iterates: IterateRecording,
    pub record_fvals: bool,
}

impl Default for RecordPolicy {
    fn default() -> Self {
        RecordPolicy {
            cadence: Cadence::PerEpoch,
            iterates: IterateRecording::EpochBoundaries,
            record_fvals: false,
        }
    }
}

impl RecordPolicy {
    pub fn full() -> Self {
        RecordPolicy {
            cadence: Cadence::PerIteration,
            iterates: IterateRecording::Full,
            record_fvals: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub x0: Vec<f64>,
    pub gamma: f64,
    /// Number of updates performed.
    pub horizon: usize,
    pub schedule: Schedule,
    pub strategy_id: String,
    pub seed: u64,
    /// `(t, x_t)` pairs kept under the recording policy, ascending in `t`.
    pub iterates: Vec<(usize, Vec<f64>)>,
    pub final_iterate: Vec<f64>,
    /// `(t, ‖∇f(x_t)‖)` at the evaluation cadence; always includes `t = 0`
    /// and `t = T`.
    pub grad_norms: Vec<(usize, f64)>,
    pub fvals: Vec<(usize, f64)>,
    pub policy: RecordPolicy,
}

impl Trajectory {
    pub fn replayable(&self) -> bool {
        self.policy.iterates != IterateRecording::Summary
    }

    /// All iterates `x_0 … x_T`, recomputed from `x_0` and the schedule. The
    /// loop is deterministic, so this is bitwise equal to the original run.
    pub fn replay<P: FiniteSumProblem + ?Sized>(&self, p: &P) -> Result<Vec<Vec<f64>>, EngineError> {
        if !self.replayable() {
            return Err(EngineError::NotReplayable);
        }
        if let Some((_, x)) = self.iterates.iter().find(|(t, _)| *t == self.horizon) {
            if self.policy.iterates == IterateRecording::Full {
                debug_assert_eq!(x, &self.final_iterate);
                return Ok(self.iterates.iter().map(|(_, x)| x.clone()).collect());
            }
        }
        let mut out = Vec::with_capacity(self.horizon + 1);
        sgd_loop(p, &self.schedule, self.gamma, self.horizon, &self.x0, |_, x| {
            out.push(x.to_vec());
            true
        })?;
        Ok(out)
    }

    /// First evaluated `t` with `‖∇f(x_t)‖ ≤ eps`.
    pub fn first_passage(&self, eps: f64) -> Option<usize> {
        self.grad_norms.iter().find(|(_, g)| *g <= eps).map(|&(t, _)| t)
    }

    pub fn final_grad_norm(&self) -> f64 {
        self.grad_norms.last().map_or(f64::NAN, |&(_, g)| g)
    }
}

fn check_inputs<P: FiniteSumProblem + ?Sized>(
    p: &P,
    s: &Schedule,
    gamma: f64,
    horizon: usize,
    x0: &[f64],
) -> Result<(), EngineError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(EngineError::Stepsize(gamma));
    }
    if s.n() != p.num_components() {
        return Err(EngineError::ComponentCount {
            schedule: s.n(),
            problem: p.num_components(),
        });
    }
    crate::problems::check_point(x0, p.dim())?;
    if let Some(len) = s.len() {
        if horizon > len {
            return Err(OrderingError::SequenceLength { t: horizon - 1, len }.into());
        }
    }
    Ok(())
}

/// Runs the update loop, calling `visit(t, x_t)` for `t = 0..=T`. Stops early
/// when `visit` returns `false`.
fn sgd_loop<P, F>(
    p: &P,
    s: &Schedule,
    gamma: f64,
    horizon: usize,
    x0: &[f64],
    mut visit: F,
) -> Result<Vec<f64>, EngineError>
where
    P: FiniteSumProblem + ?Sized,
    F: FnMut(usize, &[f64]) -> bool,
{
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    let mut indices = s.iter();
    if !visit(0, &x) {
        return Ok(x);
    }
    for t in 0..horizon {
        let i = indices
            .next()
            .ok_or(OrderingError::SequenceLength { t, len: t })?;
        p.write_component_gradient(i, &x, &mut g);
        linalg::axpy(-gamma, &g, &mut x);
        if !linalg::is_finite(&x) || linalg::norm(&x) > DIVERGENCE_NORM {
            return Err(EngineError::Diverged { t: t + 1 });
        }
        if !visit(t + 1, &x) {
            break;
        }
    }
    Ok(x)
}

pub fn run<P: FiniteSumProblem + ?Sized>(
    p: &P,
    s: &Schedule,
    gamma: f64,
    horizon: usize,
    x0: &[f64],
    policy: RecordPolicy,
) -> Result<Trajectory, EngineError> {
    check_inputs(p, s, gamma, horizon, x0)?;
    let n = p.num_components();
    let eval_period = policy.cadence.period(n);
    let keep_period = match policy.iterates {
        IterateRecording::Full => Some(1),
        IterateRecording::EpochBoundaries => Some(n),
        IterateRecording::Every(k) => Some(k.max(1)),
        IterateRecording::Summary => None,
    };
    let mut iterates = Vec::new();
    let mut grad_norms = Vec::new();
    let mut fvals = Vec::new();
    let mut grad = vec![0.0; p.dim()];
    let final_iterate = sgd_loop(p, s, gamma, horizon, x0, |t, x| {
        if keep_period.is_some_and(|k| t % k == 0 || t == horizon) {
            iterates.push((t, x.to_vec()));
        }
        if t % eval_period == 0 || t == horizon {
            p.write_full_gradient(x, &mut grad);
            grad_norms.push((t, linalg::norm(&grad)));
            if policy.record_fvals {
                fvals.push((t, p.value(x)));
            }
        }
        true
    })?;
    Ok(Trajectory {
        x0: x0.to_vec(),
        gamma,
        horizon,
        schedule: s.clone(),
        strategy_id: s.strategy().id(),
        seed: s.seed(),
        iterates,
        final_iterate,
        grad_norms,
        fvals,
        policy,
    })
}

/// First `t ≤ t_cap` on the cadence with `‖∇f(x_t)‖ ≤ eps`, without storing the
/// trajectory. Divergence counts as never reaching the target.
pub fn first_passage_time<P: FiniteSumProblem + ?Sized>(
    p: &P,
    s: &Schedule,
    gamma: f64,
    t_cap: usize,
    x0: &[f64],
    cadence: Cadence,
    eps: f64,
) -> Result<Option<usize>, EngineError> {
    check_inputs(p, s, gamma, t_cap, x0)?;
    let period = cadence.period(p.num_components());
    let mut grad = vec![0.0; p.dim()];
    let mut hit = None;
    let outcome = sgd_loop(p, s, gamma, t_cap, x0, |t, x| {
        if t % period == 0 || t == t_cap {
            p.write_full_gradient(x, &mut grad);
            if linalg::norm(&grad) <= eps {
                hit = Some(t);
                return false;
            }
        }
        true
    });
    match outcome {
        Ok(_) => Ok(hit),
        Err(EngineError::Diverged { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Auxiliary iterates that take full-gradient steps and resynchronise with
/// the real iterates every `tau` steps.
#[derive(Clone, Debug)]
pub struct VirtualSequence {
    pub tau: usize,
    /// `x̃_0 … x̃_T`.
    pub iterates: Vec<Vec<f64>>,
    /// `restarts[t]` is true when `t mod τ = 0`.
    pub restarts: Vec<bool>,
    /// `‖x̃_t − x_t‖`.
    pub distances: Vec<f64>,
}

pub fn virtual_sequence<P: FiniteSumProblem + ?Sized>(
    traj: &Trajectory,
    p: &P,
    tau: usize,
) -> Result<VirtualSequence, EngineError> {
    if tau == 0 {
        return Err(EngineError::Parameter("tau must be at least 1".into()));
    }
    let xs = traj.replay(p)?;
    let mut iterates = Vec::with_capacity(xs.len());
    let mut restarts = Vec::with_capacity(xs.len());
    let mut distances = Vec::with_capacity(xs.len());
    let mut xt = xs[0].clone();
    let mut g = vec![0.0; p.dim()];
    for (t, x) in xs.iter().enumerate() {
        if t > 0 {
            if t % tau == 0 {
                xt.copy_from_slice(x);
            } else {
                p.write_full_gradient(&xs[t - 1], &mut g);
                linalg::axpy(-traj.gamma, &g, &mut xt);
            }
        }
        restarts.push(t % tau == 0);
        distances.push(linalg::dist(&xt, x));
        iterates.push(xt.clone());
    }
    Ok(VirtualSequence {
        tau,
        iterates,
        restarts,
        distances,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TminStats {
    /// Per-repeat `T_min`, with censored repeats set to `t_cap`.
    pub per_repeat: Vec<f64>,
    pub censored: Vec<bool>,
    pub censored_count: usize,
    pub summary: MeanCi,
}

/// Iterations needed to reach `‖∇f(x_t)‖ ≤ eps`, minimised over the stepsize
/// grid separately for each repeat. Every repeat draws a fresh ordering seed
/// that is shared by all grid points. Repeats run on the current rayon pool.
#[allow(clippy::too_many_arguments)]
pub fn iterations_to_accuracy<P: FiniteSumProblem + ?Sized>(
    p: &P,
    strategy: &OrderingStrategy,
    gamma_grid: &[f64],
    eps: f64,
    repeats: usize,
    t_cap: usize,
    seed: u64,
    cadence: Cadence,
) -> Result<TminStats, EngineError> {
    if !(eps > 0.0) {
        return Err(EngineError::Parameter("eps must be positive".into()));
    }
    if gamma_grid.is_empty() || repeats == 0 {
        return Err(EngineError::Parameter("need a non-empty grid and at least one repeat".into()));
    }
    let x0 = vec![0.0; p.dim()];
    let results: Vec<Result<Option<usize>, EngineError>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let s = make_schedule(strategy.clone(), p.num_components(), rng::derive_seed(seed, Domain::Repeat, r as u64))?;
            let mut best: Option<usize> = None;
            for &gamma in gamma_grid {
                let cap = best.unwrap_or(t_cap);
                if let Some(t) = first_passage_time(p, &s, gamma, cap, &x0, cadence, eps)? {
                    best = Some(best.map_or(t, |b| b.min(t)));
                }
            }
            Ok(best)
        })
        .collect();
    let mut per_repeat = Vec::with_capacity(repeats);
    let mut censored = Vec::with_capacity(repeats);
    for r in results {
        match r? {
            Some(t) => {
                per_repeat.push(t as f64);
                censored.push(false);
            }
            None => {
                per_repeat.push(t_cap as f64);
                censored.push(true);
            }
        }
    }
    let censored_count = censored.iter().filter(|&&c| c).count();
    let summary = MeanCi::from_samples(&per_repeat);
    Ok(TminStats {
        per_repeat,
        censored,
        censored_count,
        summary,
    })
}
