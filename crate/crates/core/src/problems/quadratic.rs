use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FiniteSumProblem, ProblemError};
use crate::linalg;
use crate::rng::{self, Domain};

pub const DEFAULT_EIG_RANGE: [f64; 2] = [0.1, 1.0];

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITER: usize = 10_000;

/// Parameters of a synthetic stochastic quadratic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub d: usize,
    pub n: usize,
    pub sigma_sgd_sq: f64,
    #[serde(default = "default_eig_range")]
    pub eig_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
}

fn default_eig_range() -> [f64; 2] {
    DEFAULT_EIG_RANGE
}

impl QuadraticSpec {
    pub fn build(&self) -> Result<QuadraticProblem, ProblemError> {
        quadratic_new(self.d, self.n, self.sigma_sgd_sq, self.eig_range, self.seed)
    }
}

/// `f_i(x) = ½⟨Ax, x⟩ − ⟨b, x⟩ + ⟨u_i, x⟩` with `Σ u_i = 0`.
///
/// The per-component deviation `∇f_i(x) − ∇f(x) = u_i` does not depend on `x`,
/// so the with-replacement variance is exactly `(1/n) Σ ‖u_i‖²`.
#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    // symmetric, so column k doubles as row k
    a: DMatrix<f64>,
    b: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    mean_shift: Vec<f64>,
    smoothness: f64,
    spectrum: Option<Vec<f64>>,
}

/// Random quadratic with `A = Q diag(λ) Qᵀ` (Haar `Q`, `λ` log-uniform in
/// `eig_range` with both endpoints pinned), Gaussian `b`, and centred Gaussian
/// shifts rescaled so that `(1/n) Σ ‖u_i‖² = sigma_sgd_sq`.
pub fn quadratic_new(
    d: usize,
    n: usize,
    sigma_sgd_sq: f64,
    eig_range: [f64; 2],
    seed: u64,
) -> Result<QuadraticProblem, ProblemError> {
    if d == 0 {
        return Err(ProblemError::Parameter("dimension d must be at least 1".into()));
    }
    if n == 0 {
        return Err(ProblemError::Parameter("component count n must be at least 1".into()));
    }
    if !(sigma_sgd_sq >= 0.0 && sigma_sgd_sq.is_finite()) {
        return Err(ProblemError::Parameter(format!(
            "sigma_sgd_sq must be finite and non-negative, got {sigma_sgd_sq}"
        )));
    }
    let [lo, hi] = eig_range;
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
        return Err(ProblemError::Parameter(format!(
            "eig_range must satisfy 0 <= min <= max, got [{lo}, {hi}]"
        )));
    }
    if n == 1 && sigma_sgd_sq > 0.0 {
        return Err(ProblemError::Infeasible(
            "a single component must have zero shift, so sigma_sgd_sq must be 0".into(),
        ));
    }

    let spectrum = sample_spectrum(d, lo, hi, seed);
    let q = haar_orthogonal(d, seed);
    let qd = &q * DMatrix::from_diagonal(&DVector::from_column_slice(&spectrum));
    let a = &qd * q.transpose();
    let a = (&a + a.transpose()) * 0.5;

    let mut rng_b = rng::stream(seed, Domain::QuadraticProblem, 2);
    let b: Vec<f64> = (0..d).map(|_| rng_b.sample(StandardNormal)).collect();

    let shifts = sample_shifts(d, n, sigma_sgd_sq, seed)?;
    let mean_shift = mean_of(&shifts, d);

    Ok(QuadraticProblem {
        a,
        b,
        shifts,
        mean_shift,
        smoothness: hi,
        spectrum: Some(spectrum),
    })
}

fn sample_spectrum(d: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Domain::QuadraticProblem, 1);
    let mut lams = Vec::with_capacity(d);
    lams.push(hi);
    if d >= 2 {
        for _ in 1..d - 1 {
            let u: f64 = rng.random();
            let lam = if lo > 0.0 {
                (lo.ln() + u * (hi.ln() - lo.ln())).exp()
            } else {
                lo + u * (hi - lo)
            };
            lams.push(lam);
        }
        lams.push(lo);
    }
    lams
}

fn haar_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng::stream(seed, Domain::QuadraticProblem, 0);
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn sample_shifts(
    d: usize,
    n: usize,
    sigma_sgd_sq: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ProblemError> {
    if sigma_sgd_sq == 0.0 {
        return Ok(vec![vec![0.0; d]; n]);
    }
    let mut rng = rng::stream(seed, Domain::QuadraticProblem, 3);
    let mut shifts: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mean = mean_of(&shifts, d);
    for u in shifts.iter_mut() {
        linalg::axpy(-1.0, &mean, u);
    }
    let spread = shifts.iter().map(|u| linalg::norm_sq(u)).sum::<f64>() / n as f64;
    if spread == 0.0 {
        return Err(ProblemError::Infeasible("centred shifts vanished".into()));
    }
    let scale = (sigma_sgd_sq / spread).sqrt();
    for u in shifts.iter_mut() {
        u.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(shifts)
}

fn mean_of(vs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = linalg::pairwise_sum(vs.len(), d, |k, buf| buf.copy_from_slice(&vs[k]));
    m.iter_mut().for_each(|v| *v /= vs.len() as f64);
    m
}

impl QuadraticProblem {
    /// Builds a quadratic from explicit data. `A` must be symmetric PSD and the
    /// shifts must sum to zero; `L` is found by power iteration.
    pub fn from_parts(
        a: DMatrix<f64>,
        b: Vec<f64>,
        shifts: Vec<Vec<f64>>,
    ) -> Result<Self, ProblemError> {
        let d = a.nrows();
        if d == 0 || a.ncols() != d {
            return Err(ProblemError::Parameter("A must be a non-empty square matrix".into()));
        }
        if b.len() != d || shifts.iter().any(|u| u.len() != d) {
            return Err(ProblemError::Parameter("b and shifts must match A's dimension".into()));
        }
        if shifts.is_empty() {
            return Err(ProblemError::Parameter("at least one shift vector is required".into()));
        }
        let scale = a.amax().max(1.0);
        for i in 0..d {
            for j in 0..i {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                    return Err(ProblemError::Parameter("A must be symmetric".into()));
                }
            }
        }
        let min_eig = SymmetricEigen::new(a.clone()).eigenvalues.min();
        if min_eig < -1e-10 * scale {
            return Err(ProblemError::Parameter(format!(
                "A must be positive semidefinite (min eigenvalue {min_eig})"
            )));
        }
        let mean_shift = mean_of(&shifts, d);
        let shift_scale = shifts.iter().map(|u| linalg::norm(u)).fold(0.0, f64::max).max(1.0);
        if linalg::norm(&mean_shift) * shifts.len() as f64 > 1e-12 * shift_scale * shifts.len() as f64 {
            return Err(ProblemError::Parameter("shifts must sum to zero".into()));
        }
        let smoothness = lambda_max_power(&a)?;
        Ok(QuadraticProblem {
            a,
            b,
            shifts,
            mean_shift,
            smoothness,
            spectrum: None,
        })
    }

    /// `A = I_d`, `b = 0`: components `½‖x‖² + ⟨u_i, x⟩`, i.e. `½‖x + u_i‖²`
    /// up to a constant.
    pub fn isotropic(shifts: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        let d = shifts.first().map(|u| u.len()).unwrap_or(0);
        Self::from_parts(DMatrix::identity(d, d), vec![0.0; d], shifts)
    }

    /// One-dimensional example with `f_i = ½(x − 1)²` for the first half of
    /// the components and `½(x + 1)²` for the second half. `n` must be even.
    pub fn half_half(n: usize) -> Result<Self, ProblemError> {
        if n == 0 || !n.is_multiple_of(2) {
            return Err(ProblemError::Parameter("half/half example needs an even n".into()));
        }
        let shifts = (0..n)
            .map(|k| vec![if k < n / 2 { -1.0 } else { 1.0 }])
            .collect();
        Self::isotropic(shifts)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.b
    }

    pub fn shifts(&self) -> &[Vec<f64>] {
        &self.shifts
    }

    /// Eigenvalues used at construction, when the problem was generated.
    pub fn spectrum(&self) -> Option<&[f64]> {
        self.spectrum.as_deref()
    }

    /// `(1/n) Σ ‖u_i − ū‖²`, the exact with-replacement gradient variance.
    pub fn sigma_sgd_sq_exact(&self) -> f64 {
        let n = self.shifts.len();
        linalg::pairwise_sum_scalars(n, |k| {
            linalg::norm_sq(&linalg::sub(&self.shifts[k], &self.mean_shift))
        }) / n as f64
    }

    /// `λ_max(A)` recomputed by power iteration.
    pub fn power_iteration_smoothness(&self) -> Result<f64, ProblemError> {
        lambda_max_power(&self.a)
    }

    /// Solution of `A x = b − ū` when `A` is positive definite.
    pub fn minimizer(&self) -> Option<Vec<f64>> {
        let rhs = DVector::from_iterator(
            self.dim(),
            self.b.iter().zip(&self.mean_shift).map(|(b, u)| b - u),
        );
        let chol = self.a.clone().cholesky()?;
        Some(chol.solve(&rhs).iter().copied().collect())
    }

    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let cols = self.a.as_slice();
        for (k, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(&cols[k * d..(k + 1) * d], x);
        }
    }
}

fn lambda_max_power(a: &DMatrix<f64>) -> Result<f64, ProblemError> {
    let d = a.nrows();
    let mut rng = rng::stream(0, Domain::PowerIteration, d as u64);
    let start: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let cols = a.as_slice();
    linalg::power_iteration(
        d,
        |x, out| {
            for (k, o) in out.iter_mut().enumerate() {
                *o = linalg::dot(&cols[k * d..(k + 1) * d], x);
            }
        },
        &start,
        POWER_TOL,
        POWER_MAX_ITER,
    )
    .map_err(|stall| ProblemError::PowerIteration {
        estimate: stall.estimate,
        iterations: stall.iterations,
    })
}

impl FiniteSumProblem for QuadraticProblem {
    fn num_components(&self) -> usize {
        self.shifts.len()
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn write_component_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        self.matvec(x, out);
        for ((o, b), u) in out.iter_mut().zip(&self.b).zip(&self.shifts[i - 1]) {
            *o += u - b;
        }
    }

    fn eval_component(&self, i: usize, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.dim()];
        self.matvec(x, &mut ax);
        0.5 * linalg::dot(&ax, x) - linalg::dot(&self.b, x) + linalg::dot(&self.shifts[i - 1], x)
    }

    fn write_full_gradient(&self, x: &[f64], out: &mut [f64]) {
        self.matvec(x, out);
        for ((o, b), u) in out.iter_mut().zip(&self.b).zip(&self.mean_shift) {
            *o += u - b;
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.dim()];
        self.matvec(x, &mut ax);
        0.5 * linalg::dot(&ax, x) - linalg::dot(&self.b, x) + linalg::dot(&self.mean_shift, x)
    }

    fn optimal_value(&self) -> Option<f64> {
        self.minimizer().map(|x| self.value(&x))
    }

    fn describe(&self) -> String {
        format!("quadratic(d={}, n={}, L={})", self.dim(), self.num_components(), self.smoothness)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::mean_component_gradient;

    #[test]
    fn generated_problem_meets_its_targets() {
        let p = quadratic_new(2, 4, 1.0, DEFAULT_EIG_RANGE, 7).unwrap();
        let u = p.shifts();
        let sum: Vec<f64> = (0..2).map(|c| u.iter().map(|v| v[c]).sum()).collect();
        assert!(linalg::norm(&sum) <= 1e-12);
        let var = u.iter().map(|v| linalg::norm_sq(v)).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_variance_gives_identical_components() {
        let p = quadratic_new(3, 2, 0.0, DEFAULT_EIG_RANGE, 1).unwrap();
        assert!(p.shifts().iter().all(|u| u.iter().all(|&v| v == 0.0)));
        let x = [0.3, -1.0, 2.0];
        assert_eq!(p.component_gradient(1, &x).unwrap(), p.component_gradient(2, &x).unwrap());
    }

    #[test]
    fn construction_is_deterministic() {
        let a = quadratic_new(5, 6, 0.5, DEFAULT_EIG_RANGE, 11).unwrap();
        let b = quadratic_new(5, 6, 0.5, DEFAULT_EIG_RANGE, 11).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(a.linear_term(), b.linear_term());
        assert_eq!(a.shifts(), b.shifts());
    }

    #[test]
    fn single_component_with_variance_is_infeasible() {
        assert!(matches!(
            quadratic_new(3, 1, 0.1, DEFAULT_EIG_RANGE, 0),
            Err(ProblemError::Infeasible(_))
        ));
        assert!(quadratic_new(3, 1, 0.0, DEFAULT_EIG_RANGE, 0).is_ok());
    }

    #[test]
    fn bad_eig_range_is_rejected() {
        assert!(matches!(
            quadratic_new(3, 2, 0.1, [1.0, 0.5], 0),
            Err(ProblemError::Parameter(_))
        ));
        assert!(matches!(
            quadratic_new(3, 2, 0.1, [-0.1, 0.5], 0),
            Err(ProblemError::Parameter(_))
        ));
    }

    #[test]
    fn gradient_has_closed_form() {
        let p = quadratic_new(4, 3, 0.2, DEFAULT_EIG_RANGE, 3).unwrap();
        let x = [0.1, -0.2, 0.3, 0.4];
        let ax = p.matrix() * DVector::from_column_slice(&x);
        for i in 1..=3 {
            let g = p.component_gradient(i, &x).unwrap();
            for k in 0..4 {
                let expect = ax[k] - p.linear_term()[k] + p.shifts()[i - 1][k];
                assert!((g[k] - expect).abs() < 1e-14);
            }
        }
        let full = p.full_gradient(&x).unwrap();
        for k in 0..4 {
            assert!((full[k] - (ax[k] - p.linear_term()[k])).abs() < 1e-14);
        }
        let mean = mean_component_gradient(&p, &x);
        assert!(linalg::dist(&mean, &full) < 1e-14);
    }

    #[test]
    fn diagonal_smoothness() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let p = QuadraticProblem::from_parts(a, vec![0.0, 0.0], vec![vec![0.0, 0.0]]).unwrap();
        assert!((p.smoothness() - 4.0).abs() <= 4e-8);
    }

    #[test]
    fn generated_smoothness_matches_power_iteration() {
        let p = quadratic_new(10, 5, 0.1, [0.2, 3.0], 5).unwrap();
        assert_eq!(p.smoothness(), 3.0);
        let l = p.power_iteration_smoothness().unwrap();
        assert!((l - 3.0).abs() <= 1e-7 * 3.0);
    }

    #[test]
    fn out_of_range_index() {
        let p = QuadraticProblem::half_half(4).unwrap();
        assert_eq!(
            p.component_gradient(0, &[0.0]),
            Err(ProblemError::IndexOutOfRange { index: 0, n: 4 })
        );
        assert_eq!(
            p.component_gradient(5, &[0.0]),
            Err(ProblemError::IndexOutOfRange { index: 5, n: 4 })
        );
        assert_eq!(p.component_gradient(1, &[f64::NAN]), Err(ProblemError::NonFinite));
    }

    #[test]
    fn rejects_unbalanced_shifts() {
        assert!(QuadraticProblem::isotropic(vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn minimizer_solves_normal_equations() {
        let p = quadratic_new(6, 4, 0.3, DEFAULT_EIG_RANGE, 9).unwrap();
        let xs = p.minimizer().unwrap();
        assert!(linalg::norm(&p.full_gradient(&xs).unwrap()) < 1e-10);
        let fstar = p.optimal_value().unwrap();
        assert!(p.value(&vec![0.0; 6]) >= fstar);
    }
}
