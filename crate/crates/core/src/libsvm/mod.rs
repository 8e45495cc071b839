//! LIBSVM sparse text format.
//!
//! Each non-blank line is `<label> <idx>:<val> ...` with strictly increasing
//! 1-based indices. `#` starts a comment. Binary labels are normalised to ±1:
//! `+1`/`1` map to `+1` and `-1`/`0`/`2` map to `-1`.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::Serialize;
use thiserror::Error;

use crate::rng::{self, Domain};

#[derive(Debug, Error)]
pub enum LibsvmError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: feature index {index} does not increase (previous {previous})")]
    IndexOrder {
        line: usize,
        index: usize,
        previous: usize,
    },
    #[error("line {line}: label {label:?} is not a recognised binary label")]
    Label { line: usize, label: String },
    #[error("dataset has no rows")]
    Empty,
    #[error("cannot subsample {requested} rows from a dataset of {available}")]
    Subsample { requested: usize, available: usize },
    #[error("dimension override {requested} is below the largest feature index {observed}")]
    Dimension { requested: usize, observed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    /// `+1` or `-1`.
    pub label: i8,
    /// `(index, value)` with 1-based, strictly increasing indices.
    pub features: Vec<(usize, f64)>,
}

impl Row {
    pub fn norm_sq(&self) -> f64 {
        self.features.iter().map(|(_, v)| v * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Row>,
    /// Feature dimension; the largest index unless overridden.
    pub d: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub d: usize,
    pub nnz: usize,
    /// Fraction of rows labelled `+1`.
    pub positive_fraction: f64,
    pub max_row_norm_sq: f64,
}

fn map_label(token: &str) -> Option<i8> {
    match token {
        "+1" | "1" => return Some(1),
        "-1" | "0" | "2" => return Some(-1),
        _ => {}
    }
    // tolerate "1.0", "-1.0", "0.0"
    let v: f64 = token.parse().ok()?;
    if v == 1.0 {
        Some(1)
    } else if v == -1.0 || v == 0.0 || v == 2.0 {
        Some(-1)
    } else {
        None
    }
}

fn parse_line(line_no: usize, text: &str) -> Result<Option<Row>, LibsvmError> {
    let body = match text.find('#') {
        Some(k) => &text[..k],
        None => text,
    };
    let mut tokens = body
        .char_indices()
        .filter(|&(k, c)| !c.is_whitespace() && (k == 0 || body[..k].ends_with(char::is_whitespace)))
        .map(|(k, _)| {
            let end = body[k..].find(char::is_whitespace).map_or(body.len(), |e| k + e);
            (k + 1, &body[k..end])
        });
    let Some((_, label_tok)) = tokens.next() else {
        return Ok(None);
    };
    let label = map_label(label_tok).ok_or_else(|| LibsvmError::Label {
        line: line_no,
        label: label_tok.to_string(),
    })?;
    let mut features = Vec::new();
    let mut previous = 0usize;
    for (column, tok) in tokens {
        let malformed = |message: String| LibsvmError::Parse {
            line: line_no,
            column,
            message,
        };
        let (idx_s, val_s) = tok
            .split_once(':')
            .ok_or_else(|| malformed(format!("expected <index>:<value>, found {tok:?}")))?;
        let index: usize = idx_s
            .parse()
            .map_err(|_| malformed(format!("invalid feature index {idx_s:?}")))?;
        if index == 0 {
            return Err(malformed("feature indices start at 1".into()));
        }
        let value: f64 = val_s
            .parse()
            .map_err(|_| malformed(format!("invalid feature value {val_s:?}")))?;
        if !value.is_finite() {
            return Err(malformed(format!("non-finite feature value {val_s:?}")));
        }
        if index <= previous {
            return Err(LibsvmError::IndexOrder {
                line: line_no,
                index,
                previous,
            });
        }
        previous = index;
        features.push((index, value));
    }
    Ok(Some(Row { label, features }))
}

pub fn parse_libsvm<R: BufRead>(source: R) -> Result<Dataset, LibsvmError> {
    let mut rows = Vec::new();
    let mut d = 0;
    for (k, line) in source.lines().enumerate() {
        let line = line?;
        if let Some(row) = parse_line(k + 1, &line)? {
            if let Some(&(last, _)) = row.features.last() {
                d = d.max(last);
            }
            rows.push(row);
        }
    }
    if rows.is_empty() {
        return Err(LibsvmError::Empty);
    }
    Ok(Dataset { rows, d })
}

pub fn parse_str(text: &str) -> Result<Dataset, LibsvmError> {
    parse_libsvm(text.as_bytes())
}

/// Reads a dataset from disk, decompressing when the name ends in `.gz`.
pub fn load(path: &Path) -> Result<Dataset, LibsvmError> {
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_libsvm(BufReader::new(reader))
}

fn write_value(out: &mut String, v: f64) {
    let a = v.abs();
    // both forms print the shortest string that parses back to `v`
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        write!(out, "{v}").unwrap();
    } else {
        write!(out, "{v:e}").unwrap();
    }
}

pub fn serialize_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for row in &ds.rows {
        out.push_str(if row.label > 0 { "+1" } else { "-1" });
        for &(idx, v) in &row.features {
            write!(out, " {idx}:").unwrap();
            write_value(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn dataset_stats(ds: &Dataset) -> Stats {
    let n = ds.rows.len();
    let positives = ds.rows.iter().filter(|r| r.label > 0).count();
    Stats {
        n,
        d: ds.d,
        nnz: ds.rows.iter().map(|r| r.features.len()).sum(),
        positive_fraction: if n == 0 { f64::NAN } else { positives as f64 / n as f64 },
        max_row_norm_sq: ds.rows.iter().map(Row::norm_sq).fold(0.0, f64::max),
    }
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    fn max_index(&self) -> usize {
        self.rows
            .iter()
            .filter_map(|r| r.features.last().map(|&(i, _)| i))
            .max()
            .unwrap_or(0)
    }

    /// Uniformly chosen `m` rows, kept in file order; `d` is recomputed.
    pub fn subsample(&self, m: usize, seed: u64) -> Result<Dataset, LibsvmError> {
        if m > self.n() || m == 0 {
            return Err(LibsvmError::Subsample {
                requested: m,
                available: self.n(),
            });
        }
        let mut idx: Vec<usize> = (0..self.n()).collect();
        rng::shuffle(&mut rng::stream(seed, Domain::Subsample, 0), &mut idx);
        let mut keep = idx[..m].to_vec();
        keep.sort_unstable();
        let mut out = Dataset {
            rows: keep.into_iter().map(|k| self.rows[k].clone()).collect(),
            d: 0,
        };
        out.d = out.max_index();
        Ok(out)
    }

    /// Fixes the dimension, e.g. to keep the parent's `d` after subsampling.
    pub fn with_dim(mut self, d: usize) -> Result<Dataset, LibsvmError> {
        let observed = self.max_index();
        if d < observed {
            return Err(LibsvmError::Dimension {
                requested: d,
                observed,
            });
        }
        self.d = d;
        Ok(self)
    }

    /// Divides every feature by the largest absolute value in its column.
    pub fn max_abs_scaled(mut self) -> Dataset {
        let mut scale = vec![0.0f64; self.d + 1];
        for row in &self.rows {
            for &(i, v) in &row.features {
                scale[i] = scale[i].max(v.abs());
            }
        }
        for row in &mut self.rows {
            for (i, v) in row.features.iter_mut() {
                if scale[*i] > 0.0 {
                    *v /= scale[*i];
                }
            }
        }
        self
    }
}
