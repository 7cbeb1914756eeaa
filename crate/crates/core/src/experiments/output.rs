//! Result tables and their on-disk form.
//!
//! For an output path `out/name.csv` a run writes:
//! - `out/name.csv`: the main table;
//! - `out/name.<table>.csv`: any secondary tables;
//! - `out/name.meta.json`: digest, seeds, version, wall-clock and a summary;
//! - `out/name.snapshots.jsonl`: optional per-time records.
//!
//! Every CSV begins with `#` comment lines carrying the config digest and the seed
//! list, then a header row. Floats are written with 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// `{:.16e}` with `nan`, `inf` and `-inf` spelled out.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Empty for the main table; otherwise the infix of the file name.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric values of one column.
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column(name)?;
        Some(self.rows.iter().map(|r| r[k].as_f64().unwrap_or(f64::NAN)).collect())
    }

    /// CSV text with the provenance comment lines.
    pub fn to_csv(&self, digest: &str, seeds: &[u64]) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "# config_digest: {digest}");
        let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "# seeds: {}", seeds.join(" "));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
        out.push_str(&String::from_utf8_lossy(&bytes));
        Ok(out)
    }
}

/// Everything a run produces. `summary` lands in the metadata file.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub kind: &'static str,
    pub tables: Vec<Table>,
    pub summary: Value,
    pub snapshots: Option<Vec<Value>>,
}

impl ExperimentOutput {
    pub fn main(&self) -> &Table {
        &self.tables[0]
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

/// Paths written by [`write_results`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WrittenFiles {
    pub csv: Vec<PathBuf>,
    pub meta: PathBuf,
    pub snapshots: Option<PathBuf>,
}

impl WrittenFiles {
    pub fn all(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = self.csv.iter().map(PathBuf::as_path).collect();
        v.push(&self.meta);
        v.extend(self.snapshots.as_deref());
        v
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Writes the tables, metadata and snapshots next to `path`.
pub fn write_results(
    output: &ExperimentOutput,
    config: &ExperimentConfig,
    path: &Path,
    wall_clock_seconds: f64,
) -> Result<WrittenFiles> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let digest = config.digest()?;
    let seeds = config.seed_list();
    let mut csv_paths = Vec::new();
    for table in &output.tables {
        let p = if table.name.is_empty() {
            path.to_path_buf()
        } else {
            sibling(path, &format!("{}.csv", table.name))
        };
        fs::write(&p, table.to_csv(&digest, &seeds)?).map_err(|e| Error::io(&p, e))?;
        csv_paths.push(p);
    }
    let snapshots = match &output.snapshots {
        Some(records) => {
            let p = sibling(path, "snapshots.jsonl");
            let mut text = String::new();
            for r in records {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
            Some(p)
        }
        None => None,
    };
    let meta_path = sibling(path, "meta.json");
    let meta = json!({
        "experiment": output.kind,
        "config_digest": digest,
        "seeds": seeds,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_clock_seconds": wall_clock_seconds,
        "config": config.to_toml()?,
        "summary": output.summary,
    });
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    Ok(WrittenFiles {
        csv: csv_paths,
        meta: meta_path,
        snapshots,
    })
}
