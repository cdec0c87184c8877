//! Process boundary for external learners.
//!
//! Per fold the engine writes `train.csv`, `valid.csv`, optionally
//! `test.csv`, and `manifest.json` into a directory, then invokes the
//! configured command with that directory as its final argument. The command
//! must leave `valid_pred.csv` (and `test_pred.csv` when test data was
//! given) behind: header `pred` for single-output tasks or
//! `class_0..class_{k-1}` for multiclass, one row per input row, same order.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hpo::ParamValue;
use crate::io;
use crate::metrics::Predictions;
use crate::table::{Table, Task};

#[derive(Debug, Serialize)]
pub struct ExternalManifest<'a> {
    pub target: &'a str,
    pub task: Task,
    pub metric: &'a str,
    pub hyperparameters: &'a BTreeMap<String, ParamValue>,
    pub seed: u64,
    pub fold: usize,
}

pub fn write_fold_bundle(
    dir: &Path,
    train: &Table,
    valid: &Table,
    test: Option<&Table>,
    manifest: &ExternalManifest,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    io::write_table_csv(&dir.join("train.csv"), train)?;
    io::write_table_csv(&dir.join("valid.csv"), valid)?;
    if let Some(test) = test {
        io::write_table_csv(&dir.join("test.csv"), test)?;
    }
    io::write_json(&dir.join("manifest.json"), manifest)
}

/// Runs the external command on a prepared fold directory and collects its
/// predictions. `n_test = None` means no test predictions are expected.
pub fn run_external(
    command: &str,
    dir: &Path,
    task: Task,
    n_valid: usize,
    n_test: Option<usize>,
) -> Result<(Predictions, Option<Predictions>)> {
    let mut parts = command.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| Error::Config("external command is empty".into()))?;
    let output = Command::new(program)
        .args(parts)
        .arg(dir)
        .output()
        .map_err(|e| Error::io(program, e))?;
    if !output.status.success() {
        let mut stderr = String::from_utf8_lossy(&output.stderr).trim().to_string();
        stderr.truncate(2000);
        return Err(Error::ExternalFailed {
            code: output.status.code(),
            stderr,
        });
    }
    let valid_pred = read_prediction_csv(&dir.join("valid_pred.csv"), task, n_valid)?;
    let test_pred = match n_test {
        Some(n) => Some(read_prediction_csv(&dir.join("test_pred.csv"), task, n)?),
        None => None,
    };
    Ok((valid_pred, test_pred))
}

fn read_prediction_csv(path: &Path, task: Task, expected_rows: usize) -> Result<Predictions> {
    let malformed = |msg: String| Error::MalformedPrediction(format!("{}: {msg}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| malformed(e.to_string()))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let n_cols = match task {
        Task::Multiclass(k) => {
            let expect: Vec<String> = (0..k).map(|c| format!("class_{c}")).collect();
            if headers != expect {
                return Err(malformed(format!("header {headers:?}, want {expect:?}")));
            }
            k
        }
        _ => {
            if headers != ["pred"] {
                return Err(malformed(format!("header {headers:?}, want [\"pred\"]")));
            }
            1
        }
    };
    let mut values = Vec::with_capacity(expected_rows * n_cols);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| malformed(e.to_string()))?;
        for cell in rec.iter() {
            let v: f64 = cell
                .parse()
                .map_err(|_| malformed(format!("unparseable value {cell:?}")))?;
            if !v.is_finite() {
                return Err(malformed(format!("non-finite value {v}")));
            }
            if task.is_classification() && !(0.0..=1.0).contains(&v) {
                return Err(malformed(format!("probability {v} outside [0,1]")));
            }
            values.push(v);
        }
    }
    if values.len() != expected_rows * n_cols {
        return Err(malformed(format!(
            "{} rows, expected {expected_rows}",
            values.len() / n_cols
        )));
    }
    Predictions::new(values, n_cols)
}
