//! Grid search over stepsizes.

use rayon::prelude::*;
use serde::Serialize;

use super::HarnessError;
use crate::engine::{self, Cadence, EngineError, IterateRecording, RecordPolicy};
use crate::ordering::{make_schedule, OrderingStrategy};
use crate::problems::FiniteSumProblem;
use crate::rng::{self, Domain};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    /// Mean first time with `‖∇f(x_t)‖ ≤ eps`; repeats that miss count as the
    /// budget.
    FirstPassage { eps: f64 },
    /// Mean `‖∇f(x_T)‖` at the budget.
    FinalGradNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuneRow {
    pub gamma: f64,
    /// Lower is better; infinite when every repeat diverged.
    pub score: f64,
    pub diverged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuneResult {
    pub best_gamma: f64,
    pub table: Vec<TuneRow>,
}

/// Scores every stepsize on the same `repeats` orderings and returns the
/// best; ties go to the smaller stepsize.
#[allow(clippy::too_many_arguments)]
pub fn tune_stepsize<P: FiniteSumProblem + ?Sized>(
    p: &P,
    strategy: &OrderingStrategy,
    gamma_grid: &[f64],
    criterion: Criterion,
    budget: usize,
    repeats: usize,
    seed: u64,
    cadence: Cadence,
) -> Result<TuneResult, HarnessError> {
    if gamma_grid.is_empty() || repeats == 0 {
        return Err(HarnessError::Config("tuning needs a non-empty grid and repeats >= 1".into()));
    }
    let n = p.num_components();
    let x0 = vec![0.0; p.dim()];
    let schedules = (0..repeats)
        .map(|r| make_schedule(strategy.clone(), n, rng::derive_seed(seed, Domain::Repeat, r as u64)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::Config(e.to_string()))?;

    let table = gamma_grid
        .par_iter()
        .map(|&gamma| -> Result<TuneRow, HarnessError> {
            let mut scores = Vec::with_capacity(repeats);
            let mut diverged = 0;
            for s in &schedules {
                match criterion {
                    Criterion::FirstPassage { eps } => {
                        let hit = engine::first_passage_time(p, s, gamma, budget, &x0, cadence, eps)?;
                        scores.push(hit.unwrap_or(budget) as f64);
                    }
                    Criterion::FinalGradNorm => {
                        let policy = RecordPolicy {
                            cadence,
                            iterates: IterateRecording::Summary,
                            record_fvals: false,
                        };
                        match engine::run(p, s, gamma, budget, &x0, policy) {
                            Ok(tr) => scores.push(tr.final_grad_norm()),
                            Err(EngineError::Diverged { .. }) => diverged += 1,
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
            let score = if diverged > 0 {
                f64::INFINITY
            } else {
                scores.iter().sum::<f64>() / scores.len() as f64
            };
            Ok(TuneRow { gamma, score, diverged })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut best: Option<&TuneRow> = None;
    for row in table.iter().filter(|r| r.score.is_finite()) {
        best = match best {
            Some(b) if b.score < row.score || (b.score == row.score && b.gamma <= row.gamma) => Some(b),
            _ => Some(row),
        };
    }
    let best_gamma = best
        .map(|b| b.gamma)
        .ok_or_else(|| HarnessError::Tuning(format!("every stepsize in {gamma_grid:?} diverged")))?;
    Ok(TuneResult { best_gamma, table })
}
