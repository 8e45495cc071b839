//! Closed-form bounds on ordering variance and the convergence rate, plus
//! runtime checkers that evaluate the underlying inequalities on recorded
//! trajectories.

use serde::Serialize;
use thiserror::Error;

use crate::engine::{EngineError, Trajectory};
use crate::linalg;
use crate::ordering::OrderingStrategy;
use crate::problems::FiniteSumProblem;

/// Numerical constant of the noise term.
pub const NOISE_CONSTANT: f64 = 2633.0;
/// Coefficient of the optimisation term after dividing by `γ/4`.
pub const OPT_COEFFICIENT: f64 = 4.0;
/// Checks pass when every ratio stays below `1 + RATIO_SLACK`.
pub const RATIO_SLACK: f64 = 1e-9;

const SQRT3_TIMES_8: f64 = 13.856_406_460_551_018;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("stepsize {gamma} is outside the admissible range (0, {limit}] for L = {l}")]
    Stepsize { gamma: f64, limit: f64, l: f64 },
    #[error("invalid argument: {0}")]
    Parameter(String),
    #[error("no closed-form bound for ordering {0}; estimate it empirically instead")]
    Unsupported(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Largest admissible stepsize `1/(8√3 L)`.
pub fn stepsize_limit(l: f64) -> f64 {
    1.0 / (SQRT3_TIMES_8 * l)
}

/// `τ = ⌊1/(8√3 L γ)⌋`.
pub fn tau_from_stepsize(l: f64, gamma: f64) -> Result<usize, BoundsError> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(BoundsError::Parameter(format!("L must be positive and finite, got {l}")));
    }
    let limit = stepsize_limit(l);
    if !(gamma > 0.0) || gamma > limit * (1.0 + 1e-12) {
        return Err(BoundsError::Stepsize { gamma, limit, l });
    }
    // relative slack so that γ = limit/k lands on k despite rounding
    let ratio = limit / gamma;
    Ok(((ratio * (1.0 + 1e-9)).floor() as usize).max(1))
}

/// Upper bound on `σ²_τ` for the strategies that admit one.
pub fn sigma_tau_bound(
    strategy: &OrderingStrategy,
    tau: usize,
    n: usize,
    sigma_sgd_sq: f64,
    sigma_one_sq: Option<f64>,
) -> Result<f64, BoundsError> {
    if tau == 0 || n == 0 {
        return Err(BoundsError::Parameter("tau and n must be at least 1".into()));
    }
    let t = tau as f64;
    let window = tau.min(n) as f64;
    let n = n as f64;
    match strategy {
        OrderingStrategy::WithReplacement => Ok(t * sigma_sgd_sq),
        OrderingStrategy::Incremental | OrderingStrategy::SingleShuffle => Ok(window * n * sigma_sgd_sq),
        OrderingStrategy::RandomReshuffle => Ok(4.0 * window * n * sigma_sgd_sq),
        OrderingStrategy::SingleFunction(_) => sigma_one_sq
            .map(|s1| t * t * s1)
            .ok_or_else(|| BoundsError::Parameter("single-function bound needs sigma_one_sq".into())),
        OrderingStrategy::Explicit { .. } => Err(BoundsError::Unsupported(strategy.id())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateBound {
    /// `4 F₀ / (γ (T+1))`
    pub opt_term: f64,
    /// `4 A L² γ² σ²_τ`
    pub noise_term: f64,
    pub c_opt: f64,
    pub c_noise: f64,
    pub gamma: f64,
    pub tau: usize,
    pub horizon: usize,
}

impl RateBound {
    pub fn total(&self) -> f64 {
        self.opt_term + self.noise_term
    }
}

/// Bound on `(1/(T+1)) Σ_{t=0}^{T} E‖∇f(x_t)‖²`.
pub fn theorem_rate_bound(f0: f64, gamma: f64, horizon: usize, l: f64, sigma_tau_sq: f64) -> Result<RateBound, BoundsError> {
    let tau = tau_from_stepsize(l, gamma)?;
    if horizon == 0 {
        return Err(BoundsError::Parameter("horizon must be at least 1".into()));
    }
    if !(f0 >= 0.0) || !(sigma_tau_sq >= 0.0) {
        return Err(BoundsError::Parameter("F0 and sigma_tau_sq must be non-negative".into()));
    }
    let c_noise = OPT_COEFFICIENT * NOISE_CONSTANT;
    Ok(RateBound {
        opt_term: OPT_COEFFICIENT * f0 / (gamma * (horizon as f64 + 1.0)),
        noise_term: c_noise * l * l * gamma * gamma * sigma_tau_sq,
        c_opt: OPT_COEFFICIENT,
        c_noise,
        gamma,
        tau,
        horizon,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub t: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl CheckRow {
    fn new(t: usize, lhs: f64, rhs: f64) -> Self {
        CheckRow {
            t,
            lhs,
            rhs,
            ratio: lhs / (rhs + f64::EPSILON),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
    pub max_ratio: f64,
    pub passed: bool,
    /// Whether the inequality is expected to hold on this single input
    /// (rather than only in expectation).
    pub deterministic: bool,
}

impl CheckReport {
    fn from_rows(rows: Vec<CheckRow>, deterministic: bool) -> Self {
        let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        CheckReport {
            passed: max_ratio <= 1.0 + RATIO_SLACK && rows.iter().all(|r| r.ratio.is_finite()),
            rows,
            max_ratio,
            deterministic,
        }
    }
}

/// Evaluates, for every `t`, the bound
/// `‖Σ_{j=r(t)}^{t} (∇f(x_j) − ∇f_{i_j}(x_j))‖² ≤ 3φ_t(x_r) + 48γ²L²τ Σ_j φ_j(x_r) + 16γ²τ³L² Σ_j ‖∇f(x_j)‖²`
/// with `r = r(t) = t − t mod τ` and `φ_j(x) = ‖Σ_{l=r}^{j} (∇f(x) − ∇f_{i_l}(x))‖²`.
/// The inequality holds for every index sequence.
pub fn lemma_consensus_check<P: FiniteSumProblem + ?Sized>(
    traj: &Trajectory,
    p: &P,
    gamma: f64,
    tau: usize,
) -> Result<CheckReport, BoundsError> {
    let l = p.smoothness();
    let expected = tau_from_stepsize(l, gamma)?;
    if tau != expected || gamma != traj.gamma {
        return Err(BoundsError::Parameter(format!(
            "tau = {tau} with gamma = {gamma} does not match the trajectory (gamma = {}, tau = {expected})",
            traj.gamma
        )));
    }
    let xs = traj.replay(p)?;
    let d = p.dim();
    let tf = tau as f64;
    let c_phi_sum = 48.0 * gamma * gamma * l * l * tf;
    let c_grad_sum = 16.0 * gamma * gamma * tf.powi(3) * l * l;

    let mut rows = Vec::with_capacity(xs.len());
    let mut lhs_acc = linalg::CompensatedSum::new(d);
    let mut phi_acc = linalg::CompensatedSum::new(d);
    let mut full_r = vec![0.0; d];
    let mut full_j = vec![0.0; d];
    let mut gi = vec![0.0; d];
    let mut phi_sum = 0.0;
    let mut grad_sum = 0.0;
    for (t, x) in xs.iter().enumerate() {
        let Ok(i) = traj.schedule.index_at(t) else {
            break;
        };
        let r = t - t % tau;
        if t == r {
            lhs_acc.reset();
            phi_acc.reset();
            phi_sum = 0.0;
            grad_sum = 0.0;
            p.write_full_gradient(&xs[r], &mut full_r);
        }
        p.write_full_gradient(x, &mut full_j);
        p.write_component_gradient(i, x, &mut gi);
        lhs_acc.add(&linalg::sub(&full_j, &gi));
        p.write_component_gradient(i, &xs[r], &mut gi);
        phi_acc.add(&linalg::sub(&full_r, &gi));
        let phi_t = phi_acc.norm_sq();
        phi_sum += phi_t;
        grad_sum += linalg::norm_sq(&full_j);
        let rhs = 3.0 * phi_t + c_phi_sum * phi_sum + c_grad_sum * grad_sum;
        rows.push(CheckRow::new(t, lhs_acc.norm_sq(), rhs));
    }
    Ok(CheckReport::from_rows(rows, true))
}

/// `f(x_0) − f*`, with `f*` from the problem's closed form or, failing that,
/// from full-gradient descent at `γ = 1/L` run to `‖∇f‖ ≤ 1e-8` (at most
/// `max_iter` steps).
pub fn initial_suboptimality<P: FiniteSumProblem + ?Sized>(p: &P, x0: &[f64], max_iter: usize) -> f64 {
    let f0 = p.value(x0);
    if let Some(fs) = p.optimal_value() {
        return (f0 - fs).max(0.0);
    }
    let l = p.smoothness();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; x.len()];
    for _ in 0..max_iter {
        p.write_full_gradient(&x, &mut g);
        if linalg::norm(&g) <= 1e-8 || l <= 0.0 {
            break;
        }
        linalg::axpy(-1.0 / l, &g, &mut x);
    }
    (f0 - p.value(&x)).max(0.0)
}

/// Checks `(1/(T'+1)) Σ_{t≤T'} ‖∇f(x_t)‖² ≤ 4F₀/(γ(T'+1)) + 4A L²γ² σ²` for
/// every prefix horizon `T'` of the trajectory.
pub fn descent_bound_check<P: FiniteSumProblem + ?Sized>(
    traj: &Trajectory,
    p: &P,
    gamma: f64,
    sigma_tau_sq_bound: f64,
    f0: f64,
) -> Result<CheckReport, BoundsError> {
    descent_bound_aggregate(std::slice::from_ref(traj), p, gamma, sigma_tau_sq_bound, f0)
}

/// As [`descent_bound_check`], with the left-hand side averaged over several
/// trajectories of equal horizon (e.g. one per seed).
pub fn descent_bound_aggregate<P: FiniteSumProblem + ?Sized>(
    trajs: &[Trajectory],
    p: &P,
    gamma: f64,
    sigma_tau_sq_bound: f64,
    f0: f64,
) -> Result<CheckReport, BoundsError> {
    let first = trajs
        .first()
        .ok_or_else(|| BoundsError::Parameter("at least one trajectory is required".into()))?;
    if trajs.iter().any(|tr| tr.horizon != first.horizon || tr.gamma != gamma) {
        return Err(BoundsError::Parameter("trajectories must share gamma and horizon".into()));
    }
    tau_from_stepsize(p.smoothness(), gamma)?;
    let horizon = first.horizon;
    let mut sq_norms = vec![0.0; horizon + 1];
    let mut g = vec![0.0; p.dim()];
    for tr in trajs {
        for (t, x) in tr.replay(p)?.iter().enumerate() {
            p.write_full_gradient(x, &mut g);
            sq_norms[t] += linalg::norm_sq(&g) / trajs.len() as f64;
        }
    }
    let l = p.smoothness();
    let noise = OPT_COEFFICIENT * NOISE_CONSTANT * l * l * gamma * gamma * sigma_tau_sq_bound;
    let mut prefix = 0.0;
    let rows = sq_norms
        .iter()
        .enumerate()
        .map(|(t, s)| {
            prefix += s;
            let count = t as f64 + 1.0;
            CheckRow::new(t, prefix / count, OPT_COEFFICIENT * f0 / (gamma * count) + noise)
        })
        .collect();
    let deterministic = trajs.len() == 1 && first.schedule.strategy().is_deterministic();
    Ok(CheckReport::from_rows(rows, deterministic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, RecordPolicy};
    use crate::ordering::make_schedule;
    use crate::problems::QuadraticProblem;

    #[test]
    fn tau_examples() {
        assert_eq!(tau_from_stepsize(1.0, stepsize_limit(1.0)), Ok(1));
        assert_eq!(tau_from_stepsize(1.0, 1.0 / (16.0 * 3f64.sqrt())), Ok(2));
        assert_eq!(tau_from_stepsize(1.0, 1e-3), Ok(72));
        assert!(matches!(tau_from_stepsize(1.0, 0.1), Err(BoundsError::Stepsize { .. })));
        assert!(tau_from_stepsize(0.0, 0.01).is_err());
        assert!(tau_from_stepsize(1.0, 0.0).is_err());
    }

    #[test]
    fn table_rows() {
        let ss = sigma_tau_bound(&OrderingStrategy::SingleShuffle, 10, 4, 2.0, None).unwrap();
        assert_eq!(ss, 32.0);
        assert_eq!(sigma_tau_bound(&OrderingStrategy::WithReplacement, 1, 50, 0.01, None), Ok(0.01));
        assert_eq!(sigma_tau_bound(&OrderingStrategy::RandomReshuffle, 3, 4, 1.0, None), Ok(48.0));
        assert_eq!(sigma_tau_bound(&OrderingStrategy::SingleFunction(1), 3, 4, 1.0, Some(2.0)), Ok(18.0));
        assert!(sigma_tau_bound(&OrderingStrategy::SingleFunction(1), 3, 4, 1.0, None).is_err());
        assert!(matches!(
            sigma_tau_bound(&OrderingStrategy::explicit("f", vec![1]), 1, 1, 1.0, None),
            Err(BoundsError::Unsupported(_))
        ));
        for s in [OrderingStrategy::WithReplacement, OrderingStrategy::Incremental, OrderingStrategy::RandomReshuffle] {
            assert_eq!(sigma_tau_bound(&s, 7, 3, 0.0, None), Ok(0.0));
        }
    }

    #[test]
    fn rate_bound_terms() {
        let b = theorem_rate_bound(2.0, 0.01, 99, 1.0, 0.0).unwrap();
        assert_eq!(b.noise_term, 0.0);
        assert!((b.opt_term - 4.0 * 2.0 / (0.01 * 100.0)).abs() < 1e-12);
        let b = theorem_rate_bound(0.0, 0.01, 99, 1.0, 1.0).unwrap();
        assert_eq!(b.opt_term, 0.0);
        assert!((b.noise_term - 4.0 * 2633.0 * 1e-4).abs() < 1e-12);
        assert!(theorem_rate_bound(1.0, 0.01, 0, 1.0, 1.0).is_err());
    }

    #[test]
    fn lemma_on_half_half_incremental() {
        let p = QuadraticProblem::half_half(4).unwrap();
        let gamma = 1.0 / (20.0 * 8.0 * 3f64.sqrt());
        let tau = tau_from_stepsize(1.0, gamma).unwrap();
        let s = make_schedule(OrderingStrategy::Incremental, 4, 0).unwrap();
        let tr = run(&p, &s, gamma, 3 * 4, &[0.0], RecordPolicy::full()).unwrap();
        let rep = lemma_consensus_check(&tr, &p, gamma, tau).unwrap();
        assert_eq!(rep.rows.len(), 13);
        assert!(rep.passed, "max ratio {}", rep.max_ratio);
        assert!(matches!(lemma_consensus_check(&tr, &p, gamma, tau + 1), Err(BoundsError::Parameter(_))));
    }

    #[test]
    fn descent_on_noiseless_problem() {
        let a = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.5]));
        let p = QuadraticProblem::from_parts(a, vec![1.0, -1.0], vec![vec![0.0, 0.0]; 3]).unwrap();
        let gamma = 0.5 * stepsize_limit(p.smoothness());
        let s = make_schedule(OrderingStrategy::RandomReshuffle, 3, 1).unwrap();
        let tr = run(&p, &s, gamma, 300, &[0.0, 0.0], RecordPolicy::default()).unwrap();
        let f0 = initial_suboptimality(&p, &[0.0, 0.0], 0);
        let rep = descent_bound_check(&tr, &p, gamma, 0.0, f0).unwrap();
        assert!(rep.passed, "{}", rep.max_ratio);
        assert!(!rep.deterministic);
    }

    #[test]
    fn reference_descent_estimates_optimum() {
        let ds = crate::libsvm::parse_str("+1 1:1\n-1 1:1\n+1 2:1\n-1 1:0.5 2:1\n").unwrap();
        let p = crate::problems::logistic_from_dataset(&ds).unwrap();
        let f0 = initial_suboptimality(&p, &[0.0, 0.0], 100_000);
        assert!(f0 > 0.0 && f0 < 2f64.ln());
    }
}
