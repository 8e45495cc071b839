//! Finite-sum objectives `f(x) = (1/n) Σ f_i(x)` and their component oracles.
//!
//! Component indices are 1-based (`1..=n`) everywhere in the public API.

mod logistic;
mod quadratic;

pub use logistic::{logistic_from_dataset, LogisticProblem};
pub use quadratic::{quadratic_new, QuadraticProblem, QuadraticSpec, DEFAULT_EIG_RANGE};

use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem parameter: {0}")]
    Parameter(String),
    #[error("infeasible construction: {0}")]
    Infeasible(String),
    #[error("component index {index} outside 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("point has dimension {got}, problem expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point has a non-finite coordinate")]
    NonFinite,
    #[error("power iteration did not converge after {iterations} steps (estimate {estimate})")]
    PowerIteration { estimate: f64, iterations: usize },
    #[error("dataset has no rows")]
    EmptyDataset,
}

/// An `n`-component differentiable objective on `R^d` whose components share a
/// gradient-Lipschitz constant `L`.
///
/// Implementors provide the unchecked `write_*`/`eval_*` oracles; the checked
/// wrappers validate the index and the point.
pub trait FiniteSumProblem: Send + Sync {
    fn num_components(&self) -> usize;

    fn dim(&self) -> usize;

    /// Per-component smoothness constant `L`.
    fn smoothness(&self) -> f64;

    /// Writes `∇f_i(x)` into `out`. `i` is 1-based and assumed valid.
    fn write_component_gradient(&self, i: usize, x: &[f64], out: &mut [f64]);

    /// `f_i(x)` for a valid 1-based `i`.
    fn eval_component(&self, i: usize, x: &[f64]) -> f64;

    /// Writes `∇f(x)`, the mean of component gradients, into `out`.
    fn write_full_gradient(&self, x: &[f64], out: &mut [f64]) {
        let g = mean_component_gradient(self, x);
        out.copy_from_slice(&g);
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.num_components();
        linalg::pairwise_sum_scalars(n, |k| self.eval_component(k + 1, x)) / n as f64
    }

    /// `inf f` when it is available in closed form.
    fn optimal_value(&self) -> Option<f64> {
        None
    }

    fn describe(&self) -> String;

    fn component_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        check_index(i, self.num_components())?;
        check_point(x, self.dim())?;
        let mut out = vec![0.0; self.dim()];
        self.write_component_gradient(i, x, &mut out);
        Ok(out)
    }

    fn component_value(&self, i: usize, x: &[f64]) -> Result<f64, ProblemError> {
        check_index(i, self.num_components())?;
        check_point(x, self.dim())?;
        Ok(self.eval_component(i, x))
    }

    fn full_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ProblemError> {
        check_point(x, self.dim())?;
        let mut out = vec![0.0; self.dim()];
        self.write_full_gradient(x, &mut out);
        Ok(out)
    }
}

/// `(1/n) Σ_i ∇f_i(x)` by pairwise summation over components.
pub fn mean_component_gradient<P: FiniteSumProblem + ?Sized>(p: &P, x: &[f64]) -> Vec<f64> {
    let n = p.num_components();
    let mut g = linalg::pairwise_sum(n, p.dim(), |k, buf| p.write_component_gradient(k + 1, x, buf));
    let inv = 1.0 / n as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    g
}

/// Same value as [`FiniteSumProblem::smoothness`]; kept as a free function for
/// callers that work with trait objects.
pub fn smoothness_constant<P: FiniteSumProblem + ?Sized>(p: &P) -> f64 {
    p.smoothness()
}

pub(crate) fn check_index(i: usize, n: usize) -> Result<(), ProblemError> {
    if i == 0 || i > n {
        Err(ProblemError::IndexOutOfRange { index: i, n })
    } else {
        Ok(())
    }
}

pub(crate) fn check_point(x: &[f64], d: usize) -> Result<(), ProblemError> {
    if x.len() != d {
        return Err(ProblemError::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if !linalg::is_finite(x) {
        return Err(ProblemError::NonFinite);
    }
    Ok(())
}
