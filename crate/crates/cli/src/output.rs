//! Buffered outputs, CSV in and out, and the provenance block.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Every file a command produces, held in memory until the command has succeeded.
#[derive(Default)]
pub struct OutputSet {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, rel: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((rel.into(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, rel: impl Into<PathBuf>, value: &T) -> CliResult<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.add(rel, s.into_bytes());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes everything under `dir`. On failure the files written so far are removed.
    pub fn commit(self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        let result = (|| {
            for (rel, bytes) in &self.files {
                let path = dir.join(rel);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| CliError::config(format!("{}: {e}", parent.display())))?;
                }
                std::fs::write(&path, bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                written.push(path);
            }
            Ok(())
        })();
        match result {
            Ok(()) => Ok(written),
            Err(e) => {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                Err(e)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config_sha256: Option<String>,
    pub presets: Vec<String>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputRecord>,
    /// Resolved numerical options, including every default that was applied.
    pub options: BTreeMap<String, serde_json::Value>,
}

impl Provenance {
    pub fn new(command: &'static str, config_sha256: Option<String>, seed: u64) -> Self {
        Self {
            tool: "odmr",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_sha256,
            presets: Vec::new(),
            seed,
            inputs: Vec::new(),
            options: BTreeMap::new(),
        }
    }

    pub fn option<T: Serialize>(&mut self, key: &str, value: &T) -> CliResult<()> {
        self.options.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.inputs.push(InputRecord {
            name,
            sha256: crate::config::sha256_hex(bytes),
        });
    }

    pub fn preset(&mut self, name: Option<&str>) {
        if let Some(n) = name {
            if !self.presets.iter().any(|p| p == n) {
                self.presets.push(n.to_string());
            }
        }
    }
}

/// Column-oriented CSV with a mandatory header row and LF line endings.
pub fn csv_bytes(headers: &[&str], columns: &[&[f64]]) -> CliResult<Vec<u8>> {
    let n = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != n) || headers.len() != columns.len() {
        return Err(CliError::Numerical("CSV columns have unequal lengths".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Numerical(format!("writing CSV: {e}"));
    w.write_record(headers).map_err(io)?;
    for i in 0..n {
        w.write_record(columns.iter().map(|c| format!("{}", c[i]))).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Numerical(format!("writing CSV: {e}")))
}

pub struct CsvTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.headers.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }

    pub fn require(&self, name: &str, what: &str) -> CliResult<&[f64]> {
        self.column(name).ok_or_else(|| {
            CliError::config(format!("{what}: missing column '{name}' (have {})", self.headers.join(", ")))
        })
    }
}

pub fn parse_csv(bytes: &[u8], what: &str) -> CliResult<CsvTable> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let bad = |e: csv::Error| CliError::config(format!("{what}: {e}"));
    let headers: Vec<String> = r.headers().map_err(bad)?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(CliError::config(format!("{what}: missing header row")));
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(bad)?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::config(format!("{what}: row {}: '{field}' is not a number", line + 2))
            })?;
            columns[c].push(v);
        }
    }
    Ok(CsvTable { headers, columns })
}
