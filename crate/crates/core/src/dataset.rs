//! Labelled tabular data read from CSV.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Instance;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    rows: Vec<Instance>,
    labels: Vec<String>,
}

impl Dataset {
    pub fn new(names: Vec<String>, rows: Vec<Instance>, labels: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::input(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != names.len()) {
            return Err(Error::input(format!(
                "row {i} has {} values, expected {}",
                r.len(),
                names.len()
            )));
        }
        Ok(Self { names, rows, labels })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[Instance] {
        &self.rows
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row indices carrying `label`, in file order.
    pub fn class(&self, label: &str) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    /// Per-feature `(min, max)`.
    pub fn ranges(&self) -> Result<Vec<(f64, f64)>> {
        if self.rows.is_empty() {
            return Err(Error::input("dataset has no rows"));
        }
        let mut out = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim()];
        for r in &self.rows {
            for (range, &v) in out.iter_mut().zip(r) {
                range.0 = range.0.min(v);
                range.1 = range.1.max(v);
            }
        }
        Ok(out)
    }
}

/// Reads a CSV with a header row. Every column except `label_col` must be
/// numeric.
pub fn load_dataset(path: impl AsRef<Path>, label_col: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let parse = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse(format!("{other:?}")),
    })?;
    let header = reader.headers().map_err(|e| parse(e.to_string()))?.clone();
    let label_at = header
        .iter()
        .position(|h| h == label_col)
        .ok_or_else(|| parse(format!("no column named '{label_col}'")))?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_at)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse(e.to_string()))?;
        let mut row = Vec::with_capacity(names.len());
        for (j, field) in rec.iter().enumerate() {
            if j == label_at {
                labels.push(field.trim().to_string());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                parse(format!("record {}, column '{}': '{field}' is not a number", line + 1, &header[j]))
            })?;
            if !v.is_finite() {
                return Err(parse(format!("record {}, column '{}': non-finite value", line + 1, &header[j])));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Dataset::new(names, rows, labels).map_err(|e| parse(e.to_string()))
}
