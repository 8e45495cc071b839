//! Ordering-dependent gradient variance.
//!
//! For a probe point `x` let `D_i = ∇f_i(x) − ∇f(x)`. A window of the index
//! sequence starting at `s` gives the prefix deviations
//! `φ_j = ‖Σ_{t=s}^{s+j} D_{i_t}‖²`, and `σ²_τ` is the largest expected
//! `φ_j` over `j < τ` and over probe points.
//!
//! Random strategies (with replacement, single shuffle, random reshuffling)
//! are evaluated on windows starting at `t = 0`; their window distribution
//! does not depend on the chunk index. Incremental order is maximised over all
//! `n` start phases and explicit sequences over every start position. Small
//! instances can be enumerated exactly instead of sampled.

use itertools::Itertools;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{self, EngineError, RecordPolicy};
use crate::linalg::{self, CompensatedSum};
use crate::ordering::{make_schedule, OrderingError, OrderingStrategy};
use crate::problems::{check_point, FiniteSumProblem, ProblemError};
use crate::rng::{self, Domain};
use crate::stats::Z95;

pub const DEFAULT_NUM_ORDERINGS: usize = 100;

/// Largest `n` for which permutation strategies are enumerated on request.
const MAX_EXHAUSTIVE_PERM_N: usize = 8;
/// Largest number of with-replacement sequences enumerated on request.
const MAX_EXHAUSTIVE_SEQUENCES: f64 = 2e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VarianceError {
    #[error("invalid argument: {0}")]
    Parameter(String),
    #[error("window [{start}, {end}] exceeds sequence of length {len}")]
    Window { start: usize, end: usize, len: usize },
    #[error("exhaustive enumeration is too large: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Enumerate when `n ≤ 6` for permutation strategies or when `τ ≤ 8` (and
    /// `n ≤ 6`) for with-replacement sampling; otherwise sample.
    #[default]
    Auto,
    Sampled,
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarianceOptions {
    pub num_orderings: usize,
    pub seed: u64,
    pub mode: SamplingMode,
}

impl Default for VarianceOptions {
    fn default() -> Self {
        VarianceOptions {
            num_orderings: DEFAULT_NUM_ORDERINGS,
            seed: 0,
            mode: SamplingMode::Auto,
        }
    }
}

/// `∇f_i(x) − ∇f(x)` for every component at one point.
#[derive(Clone, Debug)]
pub struct DeviationTable {
    rows: Vec<Vec<f64>>,
}

impl DeviationTable {
    pub fn new<P: FiniteSumProblem + ?Sized>(p: &P, x: &[f64]) -> Result<Self, ProblemError> {
        check_point(x, p.dim())?;
        let full = p.full_gradient(x)?;
        let rows = (1..=p.num_components())
            .map(|i| {
                let mut g = vec![0.0; p.dim()];
                p.write_component_gradient(i, x, &mut g);
                linalg::axpy(-1.0, &full, &mut g);
                g
            })
            .collect();
        Ok(DeviationTable { rows })
    }

    /// Deviation of the 1-based component `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i - 1]
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// `(1/n) Σ ‖D_i‖²`.
    pub fn mean_sq(&self) -> f64 {
        linalg::pairwise_sum_scalars(self.n(), |k| linalg::norm_sq(&self.rows[k])) / self.n() as f64
    }

    /// `φ_j` for `j = 0 … len−1` along `seq`.
    fn prefix_phis(&self, seq: impl Iterator<Item = usize>, out: &mut Vec<f64>) {
        out.clear();
        let mut acc = CompensatedSum::new(self.dim());
        for i in seq {
            acc.add(self.row(i));
            out.push(acc.norm_sq());
        }
    }
}

/// `φ = ‖Σ_{t=start}^{start+j} (∇f_{i_t}(x) − ∇f(x))‖²`, summed pairwise.
pub fn phi<P: FiniteSumProblem + ?Sized>(
    p: &P,
    seq: &[usize],
    x: &[f64],
    start: usize,
    j: usize,
) -> Result<f64, VarianceError> {
    let end = start + j;
    if end >= seq.len() {
        return Err(VarianceError::Window {
            start,
            end,
            len: seq.len(),
        });
    }
    check_point(x, p.dim())?;
    let n = p.num_components();
    if let Some(&bad) = seq[start..=end].iter().find(|&&i| i == 0 || i > n) {
        return Err(ProblemError::IndexOutOfRange { index: bad, n }.into());
    }
    let full = p.full_gradient(x)?;
    let s = linalg::pairwise_sum(j + 1, p.dim(), |k, buf| {
        p.write_component_gradient(seq[start + k], x, buf);
        linalg::axpy(-1.0, &full, buf);
    });
    Ok(linalg::norm_sq(&s))
}

/// `max_x (1/n) Σ ‖∇f_i(x) − ∇f(x)‖²` over the probe points.
pub fn sigma_sgd_sq<P: FiniteSumProblem + ?Sized>(p: &P, probes: &[Vec<f64>]) -> Result<f64, VarianceError> {
    if probes.is_empty() {
        return Err(VarianceError::Parameter("at least one probe point is required".into()));
    }
    let mut best = 0.0f64;
    for x in probes {
        best = best.max(DeviationTable::new(p, x)?.mean_sq());
    }
    Ok(best)
}

/// `max_x ‖∇f_j(x) − ∇f(x)‖²` for the 1-based component `j`.
pub fn sigma_one_sq<P: FiniteSumProblem + ?Sized>(p: &P, j: usize, probes: &[Vec<f64>]) -> Result<f64, VarianceError> {
    crate::problems::check_index(j, p.num_components())?;
    let mut best = 0.0f64;
    for x in probes {
        best = best.max(linalg::norm_sq(DeviationTable::new(p, x)?.row(j)));
    }
    Ok(best)
}

/// Expected `φ_j` for `j = 0 … τ−1` at a single point.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixMeans {
    pub means: Vec<f64>,
    /// 95% normal half-widths; zero when exact.
    pub half_widths: Vec<f64>,
    pub num_samples: usize,
    pub exhaustive: bool,
    /// Set when a deterministic strategy was asked for several samples.
    pub deterministic_warning: bool,
}

impl PrefixMeans {
    fn exact(means: Vec<f64>, count: usize, warning: bool) -> Self {
        PrefixMeans {
            half_widths: vec![0.0; means.len()],
            means,
            num_samples: count,
            exhaustive: true,
            deterministic_warning: warning,
        }
    }
}

fn use_exhaustive(strategy: &OrderingStrategy, n: usize, tau: usize, mode: SamplingMode) -> Result<bool, VarianceError> {
    let permutation = matches!(strategy, OrderingStrategy::SingleShuffle | OrderingStrategy::RandomReshuffle);
    let replacement = matches!(strategy, OrderingStrategy::WithReplacement);
    match mode {
        SamplingMode::Sampled => Ok(false),
        SamplingMode::Auto => Ok((permutation && n <= 6) || (replacement && n <= 6 && tau <= 8)),
        SamplingMode::Exhaustive => {
            if permutation && n > MAX_EXHAUSTIVE_PERM_N {
                Err(VarianceError::TooLarge(format!("{n}! permutations")))
            } else if replacement && (n as f64).powi(tau as i32) > MAX_EXHAUSTIVE_SEQUENCES {
                Err(VarianceError::TooLarge(format!("{n}^{tau} sequences")))
            } else {
                Ok(true)
            }
        }
    }
}

/// Per-`j` expectations of `φ_j` at `x` for windows of length `tau`.
pub fn prefix_means<P: FiniteSumProblem + ?Sized>(
    p: &P,
    strategy: &OrderingStrategy,
    tau: usize,
    x: &[f64],
    opts: VarianceOptions,
) -> Result<PrefixMeans, VarianceError> {
    if tau == 0 {
        return Err(VarianceError::Parameter("tau must be at least 1".into()));
    }
    if opts.num_orderings == 0 {
        return Err(VarianceError::Parameter("num_orderings must be at least 1".into()));
    }
    let n = p.num_components();
    // validates indices for single-function and explicit strategies
    let schedule = make_schedule(strategy.clone(), n, opts.seed)?;
    let table = DeviationTable::new(p, x)?;
    let warn = strategy.is_deterministic() && opts.num_orderings > 1;
    let mut phis = Vec::with_capacity(tau);

    match strategy {
        OrderingStrategy::SingleFunction(j) => {
            let dev = linalg::norm_sq(table.row(*j));
            let means = (1..=tau).map(|m| (m * m) as f64 * dev).collect();
            return Ok(PrefixMeans::exact(means, 1, warn));
        }
        OrderingStrategy::Incremental => {
            let mut means = vec![0.0f64; tau];
            for s in 0..n {
                table.prefix_phis((s..s + tau).map(|t| t % n + 1), &mut phis);
                for (m, &v) in means.iter_mut().zip(&phis) {
                    *m = m.max(v);
                }
            }
            return Ok(PrefixMeans::exact(means, 1, warn));
        }
        OrderingStrategy::Explicit { seq, .. } => {
            let mut means = vec![0.0f64; tau];
            for s in 0..seq.len() {
                let end = (s + tau).min(seq.len());
                table.prefix_phis(seq[s..end].iter().copied(), &mut phis);
                for (m, &v) in means.iter_mut().zip(&phis) {
                    *m = m.max(v);
                }
            }
            return Ok(PrefixMeans::exact(means, 1, warn));
        }
        _ => {}
    }

    if use_exhaustive(strategy, n, tau, opts.mode)? {
        return Ok(match strategy {
            OrderingStrategy::WithReplacement => exhaustive_with_replacement(&table, tau),
            OrderingStrategy::SingleShuffle => exhaustive_single_shuffle(&table, tau),
            OrderingStrategy::RandomReshuffle => exhaustive_reshuffle(&table, tau),
            _ => unreachable!("deterministic strategies handled above"),
        });
    }

    let _ = schedule;
    let samples: Vec<Vec<f64>> = (0..opts.num_orderings)
        .into_par_iter()
        .map(|s| {
            let seed = rng::derive_seed(opts.seed, Domain::OrderingSample, s as u64);
            let sched = make_schedule(strategy.clone(), n, seed).expect("validated above");
            let mut out = Vec::with_capacity(tau);
            table.prefix_phis(sched.iter().take(tau), &mut out);
            out
        })
        .collect();
    let count = samples.len() as f64;
    let mut means = vec![0.0; tau];
    let mut half_widths = vec![0.0; tau];
    for j in 0..tau {
        let mean = samples.iter().map(|v| v[j]).sum::<f64>() / count;
        means[j] = mean;
        if samples.len() > 1 {
            let var = samples.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (count - 1.0);
            half_widths[j] = Z95 * (var / count).sqrt();
        }
    }
    Ok(PrefixMeans {
        means,
        half_widths,
        num_samples: samples.len(),
        exhaustive: false,
        deterministic_warning: false,
    })
}

fn exhaustive_with_replacement(table: &DeviationTable, tau: usize) -> PrefixMeans {
    let n = table.n();
    let d = table.dim();
    let mut totals: Vec<CompensatedSum> = (0..tau).map(|_| CompensatedSum::new(1)).collect();
    // depth-first walk of the n-ary prefix tree
    fn walk(table: &DeviationTable, depth: usize, tau: usize, sums: &mut [Vec<f64>], totals: &mut [CompensatedSum]) {
        for i in 1..=table.n() {
            let (prev, rest) = sums.split_at_mut(depth + 1);
            let cur = &mut rest[0];
            for ((c, p), r) in cur.iter_mut().zip(&prev[depth]).zip(table.row(i)) {
                *c = p + r;
            }
            totals[depth].add(&[linalg::norm_sq(cur)]);
            if depth + 1 < tau {
                walk(table, depth + 1, tau, sums, totals);
            }
        }
    }
    let mut sums = vec![vec![0.0; d]; tau + 1];
    walk(table, 0, tau, &mut sums, &mut totals);
    let means = totals
        .iter()
        .enumerate()
        .map(|(j, s)| s.value()[0] / (n as f64).powi(j as i32 + 1))
        .collect();
    PrefixMeans::exact(means, n.pow(tau as u32), false)
}

fn exhaustive_single_shuffle(table: &DeviationTable, tau: usize) -> PrefixMeans {
    let n = table.n();
    let mut totals: Vec<CompensatedSum> = (0..tau).map(|_| CompensatedSum::new(1)).collect();
    let mut phis = Vec::with_capacity(tau);
    let mut count = 0usize;
    for perm in (1..=n).permutations(n) {
        table.prefix_phis((0..tau).map(|t| perm[t % n]), &mut phis);
        for (acc, &v) in totals.iter_mut().zip(&phis) {
            acc.add(&[v]);
        }
        count += 1;
    }
    let means = totals.iter().map(|s| s.value()[0] / count as f64).collect();
    PrefixMeans::exact(means, count, false)
}

/// Windows start on an epoch boundary, so a prefix of length `q n + r` is `q`
/// complete epochs (each summing to `C = Σ D_i`, numerically zero) followed by
/// the first `r` entries of an independent uniform permutation.
fn exhaustive_reshuffle(table: &DeviationTable, tau: usize) -> PrefixMeans {
    let n = table.n();
    let d = table.dim();
    let c = linalg::pairwise_sum(n, d, |k, buf| buf.copy_from_slice(table.row(k + 1)));
    let mut totals: Vec<CompensatedSum> = (0..tau).map(|_| CompensatedSum::new(1)).collect();
    let mut count = 0usize;
    let mut acc = vec![0.0; d];
    for perm in (1..=n).permutations(n) {
        for (j, total) in totals.iter_mut().enumerate() {
            let q = (j + 1) / n;
            let r = (j + 1) % n;
            acc.iter_mut().zip(&c).for_each(|(a, ci)| *a = q as f64 * ci);
            for &i in &perm[..r] {
                linalg::add_assign(&mut acc, table.row(i));
            }
            total.add(&[linalg::norm_sq(&acc)]);
        }
        count += 1;
    }
    let means = totals.iter().map(|s| s.value()[0] / count as f64).collect();
    PrefixMeans::exact(means, count, false)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SigmaTauEstimate {
    pub tau: usize,
    pub value: f64,
    /// Half-width at the maximising `(probe, j)`.
    pub ci_half_width: f64,
    pub argmax_j: usize,
    pub argmax_probe: usize,
    pub num_samples: usize,
    pub exhaustive: bool,
    pub deterministic_warning: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceProfile {
    pub taus: Vec<usize>,
    pub sigma_hat_sq: Vec<f64>,
    pub ci_half_widths: Vec<f64>,
    pub num_samples: usize,
    pub probe_points: Vec<Vec<f64>>,
    pub strategy_id: String,
    pub exhaustive: bool,
    pub deterministic_warning: bool,
}

/// Running maximum of `E φ_j` over probes and `j`, reported at each `τ`.
pub fn variance_profile<P: FiniteSumProblem + ?Sized>(
    p: &P,
    strategy: &OrderingStrategy,
    tau_list: &[usize],
    probes: &[Vec<f64>],
    opts: VarianceOptions,
) -> Result<VarianceProfile, VarianceError> {
    let estimates = estimate_many(p, strategy, tau_list, probes, opts)?;
    Ok(VarianceProfile {
        taus: tau_list.to_vec(),
        sigma_hat_sq: estimates.iter().map(|e| e.value).collect(),
        ci_half_widths: estimates.iter().map(|e| e.ci_half_width).collect(),
        num_samples: estimates.first().map_or(0, |e| e.num_samples),
        probe_points: probes.to_vec(),
        strategy_id: strategy.id(),
        exhaustive: estimates.iter().all(|e| e.exhaustive),
        deterministic_warning: estimates.iter().any(|e| e.deterministic_warning),
    })
}

fn estimate_many<P: FiniteSumProblem + ?Sized>(
    p: &P,
    strategy: &OrderingStrategy,
    tau_list: &[usize],
    probes: &[Vec<f64>],
    opts: VarianceOptions,
) -> Result<Vec<SigmaTauEstimate>, VarianceError> {
    if tau_list.is_empty() || tau_list.contains(&0) {
        return Err(VarianceError::Parameter("tau list must be non-empty with entries ≥ 1".into()));
    }
    if tau_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(VarianceError::Parameter("tau list must be sorted ascending".into()));
    }
    if probes.is_empty() {
        return Err(VarianceError::Parameter("at least one probe point is required".into()));
    }
    let tau_max = *tau_list.last().expect("non-empty");
    let per_probe = probes
        .iter()
        .map(|x| prefix_means(p, strategy, tau_max, x, opts))
        .collect::<Result<Vec<_>, _>>()?;

    // best[j] = (value, half-width, probe) maximised over probes; then a
    // running max over j
    let mut out = Vec::with_capacity(tau_list.len());
    let mut best = (f64::NEG_INFINITY, 0.0, 0usize, 0usize);
    let mut next = 0;
    for j in 0..tau_max {
        for (k, pm) in per_probe.iter().enumerate() {
            if pm.means[j] > best.0 {
                best = (pm.means[j], pm.half_widths[j], j, k);
            }
        }
        while next < tau_list.len() && tau_list[next] == j + 1 {
            out.push(SigmaTauEstimate {
                tau: j + 1,
                value: best.0,
                ci_half_width: best.1,
                argmax_j: best.2,
                argmax_probe: best.3,
                num_samples: per_probe[0].num_samples,
                exhaustive: per_probe[0].exhaustive,
                deterministic_warning: per_probe[0].deterministic_warning,
            });
            next += 1;
        }
    }
    Ok(out)
}

pub fn estimate_sigma_tau<P: FiniteSumProblem + ?Sized>(
    p: &P,
    strategy: &OrderingStrategy,
    tau: usize,
    probes: &[Vec<f64>],
    opts: VarianceOptions,
) -> Result<SigmaTauEstimate, VarianceError> {
    Ok(estimate_many(p, strategy, &[tau], probes, opts)?.remove(0))
}

/// `σ²_τ` with `τ = n`.
pub fn sigma_epoch_sq<P: FiniteSumProblem + ?Sized>(
    p: &P,
    strategy: &OrderingStrategy,
    probes: &[Vec<f64>],
    opts: VarianceOptions,
) -> Result<SigmaTauEstimate, VarianceError> {
    estimate_sigma_tau(p, strategy, p.num_components(), probes, opts)
}

/// `x = 0` followed by `count` iterates taken at evenly spaced epoch
/// boundaries of a reference run.
pub fn probe_points_from_run<P: FiniteSumProblem + ?Sized>(
    p: &P,
    strategy: &OrderingStrategy,
    gamma: f64,
    epochs: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, VarianceError> {
    let n = p.num_components();
    let x0 = vec![0.0; p.dim()];
    let mut probes = vec![x0.clone()];
    if count == 0 || epochs == 0 {
        return Ok(probes);
    }
    let schedule = make_schedule(strategy.clone(), n, rng::derive_seed(seed, Domain::Probe, 0))?;
    let traj = engine::run(p, &schedule, gamma, epochs * n, &x0, RecordPolicy::default())?;
    let step = (epochs / count).max(1);
    for k in 1..=count.min(epochs) {
        let t = k * step * n;
        if let Some((_, x)) = traj.iterates.iter().find(|(s, _)| *s == t) {
            probes.push(x.clone());
        }
    }
    Ok(probes)
}
