//! Observation stream read from a CSV file of reals, one row per step, with
//! optional ground-truth labels in a sidecar JSON array.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EnvStep;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub path: PathBuf,
    /// JSON file holding one label array per row.
    #[serde(default)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSource {
    rows: Vec<Vec<f64>>,
    labels: Option<Vec<Vec<usize>>>,
    next: usize,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a headerless CSV of reals; every row must have the width of the first.
pub fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(rows.len() + 1, |p| p.line() as usize);
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("column {}: `{field}` is not a number", col + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("row has {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(parse_err(path, 1, "no observations"));
    }
    Ok(rows)
}

impl StreamSource {
    pub fn load(spec: &StreamSpec) -> Result<Self> {
        let rows = read_rows(&spec.path)?;
        let labels = match &spec.labels {
            None => None,
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                let labels: Vec<Vec<usize>> = serde_json::from_str(&text)?;
                if labels.len() != rows.len() {
                    return Err(parse_err(
                        p,
                        1,
                        format!("{} labels for {} observations", labels.len(), rows.len()),
                    ));
                }
                Some(labels)
            }
        };
        Ok(StreamSource { rows, labels, next: 0 })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidParameter("stream rows must be non-empty and equal width".into()));
        }
        Ok(StreamSource { rows, labels: None, next: 0 })
    }

    pub fn obs_dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn step(&mut self) -> Option<EnvStep> {
        let row = self.rows.get(self.next)?;
        let step = EnvStep {
            observation: row.clone(),
            reward: 0.0,
            reset: false,
            ground_truth: self.labels.as_ref().map(|l| l[self.next].clone()),
        };
        self.next += 1;
        Some(step)
    }
}
