//! Dense vector helpers and summation routines.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn add_assign(y: &mut [f64], x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn is_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

const PAIRWISE_LEAF: usize = 8;

/// Pairwise (cascade) sum of `len` vectors of dimension `dim`; item `k` is
/// written into the scratch buffer by `write_item(k, buf)`.
pub fn pairwise_sum<F>(len: usize, dim: usize, mut write_item: F) -> Vec<f64>
where
    F: FnMut(usize, &mut [f64]),
{
    let mut out = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    pairwise_rec(0, len, &mut write_item, &mut out, &mut scratch);
    out
}

fn pairwise_rec<F>(lo: usize, hi: usize, write_item: &mut F, out: &mut [f64], scratch: &mut [f64])
where
    F: FnMut(usize, &mut [f64]),
{
    if hi - lo <= PAIRWISE_LEAF {
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in lo..hi {
            write_item(k, scratch);
            add_assign(out, scratch);
        }
        return;
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_rec(lo, mid, write_item, out, scratch);
    let mut right = vec![0.0; out.len()];
    pairwise_rec(mid, hi, write_item, &mut right, scratch);
    add_assign(out, &right);
}

/// Pairwise sum of scalars.
pub fn pairwise_sum_scalars<F>(len: usize, mut item: F) -> f64
where
    F: FnMut(usize) -> f64,
{
    fn rec<F: FnMut(usize) -> f64>(lo: usize, hi: usize, item: &mut F) -> f64 {
        if hi - lo <= PAIRWISE_LEAF {
            return (lo..hi).map(&mut *item).sum();
        }
        let mid = lo + (hi - lo) / 2;
        rec(lo, mid, item) + rec(mid, hi, item)
    }
    rec(0, len, &mut item)
}

/// Running vector sum with Neumaier compensation per coordinate.
#[derive(Clone, Debug)]
pub struct CompensatedSum {
    sum: Vec<f64>,
    carry: Vec<f64>,
}

impl CompensatedSum {
    pub fn new(dim: usize) -> Self {
        CompensatedSum {
            sum: vec![0.0; dim],
            carry: vec![0.0; dim],
        }
    }

    pub fn reset(&mut self) {
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.carry.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn add(&mut self, x: &[f64]) {
        for ((s, c), &v) in self.sum.iter_mut().zip(self.carry.iter_mut()).zip(x) {
            let t = *s + v;
            if s.abs() >= v.abs() {
                *c += (*s - t) + v;
            } else {
                *c += (v - t) + *s;
            }
            *s = t;
        }
    }

    pub fn value(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.carry).map(|(s, c)| s + c).collect()
    }

    pub fn norm_sq(&self) -> f64 {
        self.sum
            .iter()
            .zip(&self.carry)
            .map(|(s, c)| {
                let v = s + c;
                v * v
            })
            .sum()
    }
}

/// Outcome of a power iteration that did not meet its tolerance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerIterationStall {
    pub estimate: f64,
    pub iterations: usize,
}

/// Largest eigenvalue of a symmetric positive-semidefinite operator.
///
/// Stops once the eigen-residual `‖Av − ρv‖` drops below `rel_tol · ρ`, which
/// places `ρ` within `rel_tol` (relative) of an eigenvalue of `A`.
pub fn power_iteration<F>(
    dim: usize,
    mut matvec: F,
    start: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<f64, PowerIterationStall>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut v = start.to_vec();
    let n0 = norm(&v);
    if n0 == 0.0 {
        v = vec![1.0 / (dim as f64).sqrt(); dim];
    } else {
        v.iter_mut().for_each(|x| *x /= n0);
    }
    let mut av = vec![0.0; dim];
    let mut rho = 0.0;
    for it in 0..max_iter {
        matvec(&v, &mut av);
        rho = dot(&v, &av);
        let av_norm = norm(&av);
        if av_norm == 0.0 {
            return Ok(0.0);
        }
        let residual = av
            .iter()
            .zip(&v)
            .map(|(a, x)| (a - rho * x) * (a - rho * x))
            .sum::<f64>()
            .sqrt();
        if residual <= rel_tol * rho.abs() {
            log::trace!("power iteration converged after {} steps", it + 1);
            return Ok(rho);
        }
        for (vi, ai) in v.iter_mut().zip(&av) {
            *vi = ai / av_norm;
        }
    }
    Err(PowerIterationStall {
        estimate: rho,
        iterations: max_iter,
    })
}
