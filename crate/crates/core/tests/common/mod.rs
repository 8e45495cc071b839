#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use shufflesgd::problems::{quadratic_new, FiniteSumProblem, LogisticProblem, QuadraticProblem};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(r: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
}

/// Random quadratic with a random size drawn from the given ranges.
pub fn random_quadratic(r: &mut ChaCha8Rng, d_max: usize, n_max: usize) -> QuadraticProblem {
    let d = r.random_range(1..=d_max);
    let n = r.random_range(2..=n_max);
    let sigma = [0.0, 0.01, 0.5, 3.0][r.random_range(0..4)];
    quadratic_new(d, n, sigma, [0.1, 1.0], r.random()).unwrap()
}

/// Dense-ish random logistic problem with about 60% non-zeros per row.
pub fn random_logistic(r: &mut ChaCha8Rng, d_max: usize, n_max: usize) -> LogisticProblem {
    let d = r.random_range(1..=d_max);
    let n = r.random_range(1..=n_max);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::new();
        for k in 0..d {
            if r.random_bool(0.6) {
                row.push((k, r.sample::<f64, _>(StandardNormal)));
            }
        }
        rows.push(row);
        labels.push(if r.random_bool(0.5) { 1.0 } else { -1.0 });
    }
    LogisticProblem::new(rows, labels, d).unwrap()
}

/// Either family, chosen at random.
pub fn random_problem(r: &mut ChaCha8Rng, d_max: usize, n_max: usize) -> Box<dyn FiniteSumProblem> {
    if r.random_bool(0.5) {
        Box::new(random_quadratic(r, d_max, n_max))
    } else {
        Box::new(random_logistic(r, d_max, n_max))
    }
}

/// Gradient of `f_i` summed naively in index order.
pub fn naive_full_gradient(p: &dyn FiniteSumProblem, x: &[f64]) -> Vec<f64> {
    let n = p.num_components();
    let mut g = vec![0.0; p.dim()];
    for i in 1..=n {
        for (a, b) in g.iter_mut().zip(p.component_gradient(i, x).unwrap()) {
            *a += b / n as f64;
        }
    }
    g
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn random_permutation(r: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (1..=n).collect();
    for k in (1..n).rev() {
        let j = r.random_range(0..=k);
        p.swap(k, j);
    }
    p
}

pub fn standard_normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}
