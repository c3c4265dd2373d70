use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "round,algorithm,seed,test_accuracy,mean_d,mean_weight,wall_clock_seconds";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// 1-based index of the completed round.
    pub round: usize,
    pub algorithm: String,
    pub seed: u64,
    pub test_accuracy: f64,
    pub mean_d: f64,
    pub mean_weight: f64,
    pub wall_clock_seconds: f64,
}

/// Appends one CSV row per round and flushes it immediately, so an
/// interrupted run leaves a valid prefix.
pub struct MetricsWriter {
    path: PathBuf,
    file: File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        file.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Rewrites `path` keeping the header and the given rows, then appends.
    pub fn resume(path: &Path, keep: &[MetricsRow]) -> Result<Self> {
        let mut w = MetricsWriter::create(path)?;
        for row in keep {
            w.append(row)?;
        }
        w.file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(w)
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        csv.serialize(row)?;
        let bytes = csv.into_inner().map_err(|e| Error::io(&self.path, e.into_error()))?;
        self.file.write_all(&bytes).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema {
            path: path.to_path_buf(),
            reason: format!("{other:?}"),
        },
    })?;
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != METRICS_HEADER {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            reason: format!("header `{header}` differs from `{METRICS_HEADER}`"),
        });
    }
    rdr.deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub algorithm: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    /// Mean final-round accuracy.
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub std: f64,
}

/// Groups runs by algorithm (sorted by name) and summarizes final-round
/// test accuracy.
pub fn compare_runs(paths: &[PathBuf]) -> Result<Vec<ComparisonRow>> {
    let mut groups: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for p in paths {
        let rows = read_metrics(p)?;
        let last = rows.last().ok_or_else(|| Error::Schema {
            path: p.clone(),
            reason: "no completed rounds".into(),
        })?;
        if rows.iter().any(|r| r.algorithm != last.algorithm || r.seed != last.seed) {
            return Err(Error::Schema {
                path: p.clone(),
                reason: "rows mix algorithms or seeds".into(),
            });
        }
        groups
            .entry(last.algorithm.clone())
            .or_default()
            .push((last.seed, last.test_accuracy));
    }
    Ok(groups
        .into_iter()
        .map(|(algorithm, runs)| {
            let n = runs.len() as f64;
            let mean = runs.iter().map(|r| r.1).sum::<f64>() / n;
            let std = if runs.len() < 2 {
                0.0
            } else {
                (runs.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            ComparisonRow {
                algorithm,
                runs: runs.len(),
                seeds: runs.iter().map(|r| r.0).collect(),
                mean,
                std,
            }
        })
        .collect())
}

pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("algorithm            runs  final accuracy\n");
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:>4}  {:.4} ± {:.4}\n",
            r.algorithm, r.runs, r.mean, r.std
        ));
    }
    out
}
