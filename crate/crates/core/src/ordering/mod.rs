//! Index schedules `(i_0, i_1, …)` for the SGD loop.
//!
//! Every random schedule is a pure function of `(strategy, n, seed, t)`: a
//! with-replacement draw at step `t` comes from its own counter-keyed stream,
//! and the permutation for epoch `k` is regenerated from stream `k`. Indices
//! are 1-based.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::rng::{self, Domain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrderingError {
    #[error("invalid ordering: {0}")]
    Parameter(String),
    #[error("explicit sequence of length {len} has no entry at t = {t}")]
    SequenceLength { t: usize, len: usize },
    #[error("cannot parse ordering {0:?}; expected sgd, ig, ss, rr, single:<j> or explicit:<path>")]
    Unknown(String),
    #[error("explicit sequence file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub enum OrderingStrategy {
    /// i.i.d. uniform indices.
    WithReplacement,
    /// `i_t = t mod n + 1`.
    Incremental,
    /// One random permutation reused every epoch.
    SingleShuffle,
    /// A fresh random permutation each epoch.
    RandomReshuffle,
    /// Always the same component.
    SingleFunction(usize),
    /// A given finite sequence; `source` labels it in outputs.
    Explicit { source: String, seq: Arc<[usize]> },
}

impl OrderingStrategy {
    pub fn explicit(source: impl Into<String>, seq: Vec<usize>) -> Self {
        OrderingStrategy::Explicit {
            source: source.into(),
            seq: seq.into(),
        }
    }

    /// Parses `sgd`, `ig`, `ss`, `rr`, `single:<j>` or `explicit:<path>`.
    /// Explicit files hold one 1-based index per line.
    pub fn parse(text: &str) -> Result<Self, OrderingError> {
        let t = text.trim();
        match t {
            "sgd" => return Ok(OrderingStrategy::WithReplacement),
            "ig" => return Ok(OrderingStrategy::Incremental),
            "ss" => return Ok(OrderingStrategy::SingleShuffle),
            "rr" => return Ok(OrderingStrategy::RandomReshuffle),
            _ => {}
        }
        if let Some(j) = t.strip_prefix("single:") {
            let j = j
                .parse()
                .map_err(|_| OrderingError::Unknown(text.to_string()))?;
            return Ok(OrderingStrategy::SingleFunction(j));
        }
        if let Some(path) = t.strip_prefix("explicit:") {
            return read_explicit(Path::new(path));
        }
        Err(OrderingError::Unknown(text.to_string()))
    }

    /// Stable identifier used in CSV outputs and seed derivation.
    pub fn id(&self) -> String {
        self.to_string()
    }

    /// Whether the sequence is fixed regardless of seed.
    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            OrderingStrategy::Incremental
                | OrderingStrategy::SingleFunction(_)
                | OrderingStrategy::Explicit { .. }
        )
    }

    fn domain(&self) -> Option<Domain> {
        match self {
            OrderingStrategy::WithReplacement => Some(Domain::WithReplacement),
            OrderingStrategy::SingleShuffle => Some(Domain::SingleShuffle),
            OrderingStrategy::RandomReshuffle => Some(Domain::RandomReshuffle),
            _ => None,
        }
    }
}

impl fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingStrategy::WithReplacement => f.write_str("sgd"),
            OrderingStrategy::Incremental => f.write_str("ig"),
            OrderingStrategy::SingleShuffle => f.write_str("ss"),
            OrderingStrategy::RandomReshuffle => f.write_str("rr"),
            OrderingStrategy::SingleFunction(j) => write!(f, "single:{j}"),
            OrderingStrategy::Explicit { source, .. } => write!(f, "explicit:{source}"),
        }
    }
}

fn read_explicit(path: &Path) -> Result<OrderingStrategy, OrderingError> {
    let file_err = |message: String| OrderingError::File {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    let mut seq = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = line
            .parse()
            .map_err(|_| file_err(format!("line {}: {line:?} is not an index", k + 1)))?;
        seq.push(v);
    }
    Ok(OrderingStrategy::explicit(path.display().to_string(), seq))
}

/// A strategy bound to a component count and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    n: usize,
    seed: u64,
    strategy: OrderingStrategy,
    // the single-shuffle permutation, drawn once
    fixed_perm: Option<Arc<[usize]>>,
}

pub fn make_schedule(strategy: OrderingStrategy, n: usize, seed: u64) -> Result<Schedule, OrderingError> {
    if n == 0 {
        return Err(OrderingError::Parameter("n must be at least 1".into()));
    }
    match &strategy {
        OrderingStrategy::SingleFunction(j) if *j == 0 || *j > n => {
            return Err(OrderingError::Parameter(format!(
                "single-function index {j} outside 1..={n}"
            )));
        }
        OrderingStrategy::Explicit { seq, .. } => {
            if let Some(bad) = seq.iter().find(|&&i| i == 0 || i > n) {
                return Err(OrderingError::Parameter(format!(
                    "explicit sequence entry {bad} outside 1..={n}"
                )));
            }
        }
        _ => {}
    }
    let fixed_perm = match strategy {
        OrderingStrategy::SingleShuffle => Some(draw_permutation(n, seed, Domain::SingleShuffle, 0).into()),
        _ => None,
    };
    Ok(Schedule {
        n,
        seed,
        strategy,
        fixed_perm,
    })
}

fn draw_permutation(n: usize, seed: u64, domain: Domain, counter: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (1..=n).collect();
    rng::shuffle(&mut rng::stream(seed, domain, counter), &mut perm);
    perm
}

impl Schedule {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn strategy(&self) -> &OrderingStrategy {
        &self.strategy
    }

    /// Number of indices available, `None` when unbounded.
    pub fn len(&self) -> Option<usize> {
        match &self.strategy {
            OrderingStrategy::Explicit { seq, .. } => Some(seq.len()),
            _ => None,
        }
    }

    /// Permutation used in epoch `k` (single shuffle and random reshuffling).
    pub fn epoch_permutation(&self, k: usize) -> Option<Vec<usize>> {
        match &self.strategy {
            OrderingStrategy::SingleShuffle => self.fixed_perm.as_ref().map(|p| p.to_vec()),
            OrderingStrategy::RandomReshuffle => Some(draw_permutation(
                self.n,
                self.seed,
                Domain::RandomReshuffle,
                k as u64,
            )),
            _ => None,
        }
    }

    pub fn index_at(&self, t: usize) -> Result<usize, OrderingError> {
        let n = self.n;
        Ok(match &self.strategy {
            OrderingStrategy::WithReplacement => {
                let domain = self.strategy.domain().expect("random strategy");
                rng::uniform_below(&mut rng::stream(self.seed, domain, t as u64), n) + 1
            }
            OrderingStrategy::Incremental => t % n + 1,
            OrderingStrategy::SingleShuffle => self.fixed_perm.as_ref().expect("drawn at construction")[t % n],
            OrderingStrategy::RandomReshuffle => {
                draw_permutation(n, self.seed, Domain::RandomReshuffle, (t / n) as u64)[t % n]
            }
            OrderingStrategy::SingleFunction(j) => *j,
            OrderingStrategy::Explicit { seq, .. } => *seq
                .get(t)
                .ok_or(OrderingError::SequenceLength { t, len: seq.len() })?,
        })
    }

    /// `(i_0, …, i_T)`, i.e. `horizon + 1` entries.
    pub fn generate_sequence(&self, horizon: usize) -> Result<Vec<usize>, OrderingError> {
        if let Some(len) = self.len() {
            if horizon >= len {
                return Err(OrderingError::SequenceLength { t: horizon, len });
            }
        }
        Ok(self.iter().take(horizon + 1).collect())
    }

    pub fn iter(&self) -> ScheduleIter<'_> {
        self.iter_from(0)
    }

    /// Sequential cursor starting at `t`; caches the current epoch's
    /// permutation. Finite for explicit sequences.
    pub fn iter_from(&self, t: usize) -> ScheduleIter<'_> {
        ScheduleIter {
            schedule: self,
            t,
            epoch: usize::MAX,
            perm: Vec::new(),
        }
    }
}

pub struct ScheduleIter<'a> {
    schedule: &'a Schedule,
    t: usize,
    epoch: usize,
    perm: Vec<usize>,
}

impl Iterator for ScheduleIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let s = self.schedule;
        let t = self.t;
        let i = match &s.strategy {
            OrderingStrategy::RandomReshuffle => {
                let k = t / s.n;
                if k != self.epoch {
                    self.perm = draw_permutation(s.n, s.seed, Domain::RandomReshuffle, k as u64);
                    self.epoch = k;
                }
                self.perm[t % s.n]
            }
            _ => s.index_at(t).ok()?,
        };
        self.t += 1;
        Some(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(s: OrderingStrategy, n: usize, seed: u64) -> Schedule {
        make_schedule(s, n, seed).unwrap()
    }

    #[test]
    fn incremental_cycles() {
        let s = sched(OrderingStrategy::Incremental, 3, 0);
        assert_eq!(s.generate_sequence(5).unwrap(), vec![1, 2, 3, 1, 2, 3]);
        let s = sched(OrderingStrategy::Incremental, 2, 0);
        assert_eq!(s.generate_sequence(2).unwrap(), vec![1, 2, 1]);
    }

    #[test]
    fn single_function_is_constant() {
        let s = sched(OrderingStrategy::SingleFunction(2), 3, 0);
        assert_eq!(s.generate_sequence(4).unwrap(), vec![2; 5]);
    }

    #[test]
    fn reshuffle_blocks_are_permutations() {
        let s = sched(OrderingStrategy::RandomReshuffle, 5, 2);
        let seq = s.generate_sequence(5 * 100 - 1).unwrap();
        for block in seq.chunks(5) {
            let mut b = block.to_vec();
            b.sort_unstable();
            assert_eq!(b, vec![1, 2, 3, 4, 5]);
        }
        let s = sched(OrderingStrategy::RandomReshuffle, 3, 9);
        let seq = s.generate_sequence(5).unwrap();
        assert_eq!(seq.len(), 6);
    }

    #[test]
    fn iterator_matches_random_access() {
        for strat in [
            OrderingStrategy::WithReplacement,
            OrderingStrategy::SingleShuffle,
            OrderingStrategy::RandomReshuffle,
        ] {
            let s = sched(strat, 7, 11);
            let a: Vec<usize> = s.iter_from(3).take(40).collect();
            let b: Vec<usize> = (3..43).map(|t| s.index_at(t).unwrap()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_shuffle_repeats_its_permutation() {
        let s = sched(OrderingStrategy::SingleShuffle, 4, 1);
        let seq = s.generate_sequence(11).unwrap();
        assert_eq!(seq[0..4], seq[4..8]);
        assert_eq!(seq[4..8], seq[8..12]);
        assert_eq!(s, sched(OrderingStrategy::SingleShuffle, 4, 1));
    }

    #[test]
    fn explicit_sequence_exhausts() {
        let s = sched(OrderingStrategy::explicit("inline", vec![2, 1, 2]), 2, 0);
        assert_eq!(s.index_at(2), Ok(2));
        assert_eq!(s.index_at(3), Err(OrderingError::SequenceLength { t: 3, len: 3 }));
        assert!(s.generate_sequence(3).is_err());
        assert_eq!(s.iter().count(), 3);
    }

    #[test]
    fn invalid_indices_are_rejected() {
        assert!(make_schedule(OrderingStrategy::SingleFunction(0), 3, 0).is_err());
        assert!(make_schedule(OrderingStrategy::SingleFunction(4), 3, 0).is_err());
        assert!(make_schedule(OrderingStrategy::explicit("x", vec![1, 4]), 3, 0).is_err());
        assert!(make_schedule(OrderingStrategy::Incremental, 0, 0).is_err());
    }

    #[test]
    fn names_round_trip() {
        for name in ["sgd", "ig", "ss", "rr", "single:3"] {
            assert_eq!(OrderingStrategy::parse(name).unwrap().to_string(), name);
        }
        assert!(matches!(OrderingStrategy::parse("shuffle"), Err(OrderingError::Unknown(_))));
        assert!(OrderingStrategy::parse("single:x").is_err());
    }

    #[test]
    fn explicit_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("order.txt");
        std::fs::write(&path, "3\n\n1\n 2 \n").unwrap();
        let strat = OrderingStrategy::parse(&format!("explicit:{}", path.display())).unwrap();
        let s = sched(strat, 3, 0);
        assert_eq!(s.generate_sequence(2).unwrap(), vec![3, 1, 2]);
        std::fs::write(&path, "1\nx\n").unwrap();
        assert!(OrderingStrategy::parse(&format!("explicit:{}", path.display())).is_err());
    }

    #[test]
    fn with_replacement_frequency() {
        let s = sched(OrderingStrategy::WithReplacement, 2, 5);
        let ones = s.iter().take(10_000).filter(|&i| i == 1).count();
        let freq = ones as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "{freq}");
    }
}
