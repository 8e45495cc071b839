use super::{FiniteSumProblem, ProblemError};
use crate::libsvm::Dataset;

/// Unregularised logistic loss `f_i(x) = log(1 + exp(−y_i⟨a_i, x⟩))` over
/// sparse feature rows.
#[derive(Clone, Debug)]
pub struct LogisticProblem {
    // 0-based column indices, ascending
    rows: Vec<Vec<(usize, f64)>>,
    labels: Vec<f64>,
    d: usize,
    smoothness: f64,
}

pub fn logistic_from_dataset(ds: &Dataset) -> Result<LogisticProblem, ProblemError> {
    if ds.rows.is_empty() {
        return Err(ProblemError::EmptyDataset);
    }
    let rows = ds
        .rows
        .iter()
        .map(|r| r.features.iter().map(|&(i, v)| (i - 1, v)).collect())
        .collect();
    let labels = ds.rows.iter().map(|r| f64::from(r.label)).collect();
    LogisticProblem::new(rows, labels, ds.d)
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticProblem {
    /// `rows` use 0-based column indices below `d`; labels must be ±1.
    pub fn new(rows: Vec<Vec<(usize, f64)>>, labels: Vec<f64>, d: usize) -> Result<Self, ProblemError> {
        if rows.is_empty() {
            return Err(ProblemError::EmptyDataset);
        }
        if d == 0 {
            return Err(ProblemError::Parameter("dimension must be at least 1".into()));
        }
        if rows.len() != labels.len() {
            return Err(ProblemError::Parameter("one label per row is required".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(ProblemError::Parameter("labels must be +1 or -1".into()));
        }
        for row in &rows {
            if row.iter().any(|&(i, v)| i >= d || !v.is_finite()) {
                return Err(ProblemError::Parameter("feature index out of range or non-finite value".into()));
            }
            if row.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(ProblemError::Parameter("feature indices must increase".into()));
            }
        }
        let smoothness = rows
            .iter()
            .map(|r| r.iter().map(|(_, v)| v * v).sum::<f64>())
            .fold(0.0, f64::max)
            / 4.0;
        Ok(LogisticProblem {
            rows,
            labels,
            d,
            smoothness,
        })
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn margin(&self, k: usize, x: &[f64]) -> f64 {
        self.labels[k] * self.rows[k].iter().map(|&(c, v)| v * x[c]).sum::<f64>()
    }
}

impl FiniteSumProblem for LogisticProblem {
    fn num_components(&self) -> usize {
        self.rows.len()
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn write_component_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let k = i - 1;
        out.fill(0.0);
        let coef = -self.labels[k] * sigmoid(-self.margin(k, x));
        for &(c, v) in &self.rows[k] {
            out[c] = coef * v;
        }
    }

    fn eval_component(&self, i: usize, x: &[f64]) -> f64 {
        softplus(-self.margin(i - 1, x))
    }

    fn write_full_gradient(&self, x: &[f64], out: &mut [f64]) {
        // Neumaier summation over sparse contributions
        let mut carry = vec![0.0; self.d];
        out.fill(0.0);
        for k in 0..self.rows.len() {
            let coef = -self.labels[k] * sigmoid(-self.margin(k, x));
            for &(c, v) in &self.rows[k] {
                let term = coef * v;
                let s = out[c];
                let t = s + term;
                carry[c] += if s.abs() >= term.abs() { (s - t) + term } else { (term - t) + s };
                out[c] = t;
            }
        }
        let inv = 1.0 / self.rows.len() as f64;
        for (o, c) in out.iter_mut().zip(&carry) {
            *o = (*o + c) * inv;
        }
    }

    fn describe(&self) -> String {
        format!("logistic(d={}, n={}, L={})", self.d, self.rows.len(), self.smoothness)
    }
}
