//! CSV tables with a provenance header and atomic writes.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use tempfile::NamedTempFile;

use super::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;
/// Header line that varies between runs; ignore it when comparing outputs.
pub const TIMESTAMP_PREFIX: &str = "# generated_at=";

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: String,
    /// Extra `# key=value` lines after the provenance block.
    pub notes: Vec<String>,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Table {
    pub fn new(schema: &str, header: Vec<&'static str>) -> Self {
        Table {
            schema: schema.to_string(),
            notes: Vec::new(),
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, prov: &Provenance, timestamp: Option<u64>) -> String {
        let mut out = String::new();
        out.push_str(&format!("# schema=shufflesgd/{}/v{SCHEMA_VERSION}\n", self.schema));
        out.push_str(&format!("# config_sha256={}\n", prov.config_hash));
        out.push_str(&format!("# seed={}\n", prov.seed));
        out.push_str(&format!("# version={}\n", env!("CARGO_PKG_VERSION")));
        if let Some(ts) = timestamp {
            out.push_str(&format!("{TIMESTAMP_PREFIX}{ts}\n"));
        }
        for note in &self.notes {
            out.push_str(&format!("# {note}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| HarnessError::Io(e.error))?;
    Ok(())
}

/// Drops the timestamp line so two outputs can be compared byte for byte.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(TIMESTAMP_PREFIX))
        .map(|l| format!("{l}\n"))
        .collect()
}

/// Shortest round-trip formatting for floats in CSV cells.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
