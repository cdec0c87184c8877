//! CSV ingestion with schema control, leaderboard loading, and artifact
//! persistence. Parsing is strict RFC 4180: no dialect sniffing, no field
//! trimming — determinism over convenience.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{metric_direction, Direction, Predictions};
use crate::table::{Column, ColumnKind, Role, Table, TargetSpec, Task};

/// Shortest round-trip decimal formatting; reloading the text recovers the
/// exact bit pattern.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "NA".into(), "NaN".into()]
}

/// Declarative description of a CSV dataset: column kinds, missing tokens,
/// sentinel replacements, target/id roles, task, and evaluation metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaConfig {
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub task: Option<Task>,
    /// Heavy-tailed regression target: the standardized pipeline's log step
    /// applies only when set.
    #[serde(default)]
    pub log_target: bool,
    #[serde(default)]
    pub metric: Option<String>,
    /// Per-column kind overrides; unlisted columns are inferred.
    #[serde(default)]
    pub kinds: BTreeMap<String, ColumnKind>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    /// Per-column cell texts treated as missing (e.g. "-1" for a sensor
    /// column that encodes absent readings as -1).
    #[serde(default)]
    pub sentinels: BTreeMap<String, Vec<String>>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            target: None,
            id: None,
            task: None,
            log_target: false,
            metric: None,
            kinds: BTreeMap::new(),
            missing_tokens: default_missing_tokens(),
            sentinels: BTreeMap::new(),
        }
    }
}

impl SchemaConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = &self.metric {
            metric_direction(m)?;
        }
        if self.target.is_some() && self.task.is_none() {
            return Err(Error::Config(
                "schema declares a target but no task".into(),
            ));
        }
        if let Some(Task::Multiclass(k)) = self.task {
            if k < 2 {
                return Err(Error::Config(format!(
                    "multiclass task needs at least 2 classes, got {k}"
                )));
            }
        }
        if self.log_target && !matches!(self.task, Some(Task::Regression) | None) {
            return Err(Error::Config(
                "log_target applies only to regression tasks".into(),
            ));
        }
        Ok(())
    }

    /// Copy for loading a test file that has no target column.
    pub fn without_target(&self) -> SchemaConfig {
        let mut s = self.clone();
        s.target = None;
        s
    }
}

fn map_csv_err(path: &str, e: csv::Error) -> Error {
    if let csv::ErrorKind::UnequalLengths { pos, expected_len, len } = e.kind() {
        return Error::RaggedRow {
            row: pos.as_ref().map_or(0, |p| p.line() as usize),
            expected: *expected_len as usize,
            got: *len as usize,
        };
    }
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::ParseError {
            row: 0,
            col: String::new(),
            msg: format!("{other:?}"),
        },
    }
}

fn read_raw(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let p = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| map_csv_err(&p, e))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| map_csv_err(&p, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| map_csv_err(&p, e))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((headers, rows))
}

/// Loads a CSV into a typed Table. Kind resolution per column: schema
/// override if present, else Numeric iff every non-missing cell parses as a
/// float (order-insensitive), else Categorical.
pub fn load_csv(path: &Path, schema: &SchemaConfig) -> Result<Table> {
    schema.validate()?;
    let (headers, rows) = read_raw(path)?;
    if let Some(t) = &schema.target {
        if !headers.contains(t) {
            return Err(Error::MissingTarget(t.clone()));
        }
    }

    let missing: BTreeSet<&str> = schema.missing_tokens.iter().map(String::as_str).collect();
    let mut columns = Vec::with_capacity(headers.len());
    for (j, name) in headers.iter().enumerate() {
        let sentinels: BTreeSet<&str> = schema
            .sentinels
            .get(name)
            .map(|v| v.iter().map(String::as_str).collect())
            .unwrap_or_default();
        let cells: Vec<Option<&str>> = rows
            .iter()
            .map(|r| {
                let cell = r[j].as_str();
                if missing.contains(cell) || sentinels.contains(cell) {
                    None
                } else {
                    Some(cell)
                }
            })
            .collect();

        let declared = schema.kinds.get(name).copied();
        let is_target = schema.target.as_deref() == Some(name);
        let col = match declared {
            Some(ColumnKind::Categorical) => Column::categorical_from_texts(name, &cells),
            Some(ColumnKind::Numeric) => parse_numeric(name, &cells, true)?,
            None => {
                let all_numeric = cells
                    .iter()
                    .flatten()
                    .all(|c| c.parse::<f64>().is_ok());
                if all_numeric {
                    parse_numeric(name, &cells, false)?
                } else {
                    Column::categorical_from_texts(name, &cells)
                }
            }
        };
        let role = if is_target {
            Role::Target
        } else if schema.id.as_deref() == Some(name) {
            Role::Id
        } else {
            Role::Feature
        };
        let col = if is_target {
            encode_target(col, schema.task.expect("validated"))?
        } else {
            col
        };
        columns.push(col.with_role(role));
    }

    let mut table = Table::new(columns)?;
    if let Some(task) = schema.task {
        table.target_spec = Some(TargetSpec {
            task,
            transform: Default::default(),
            log_target: schema.log_target,
        });
    }
    Ok(table)
}

fn parse_numeric(name: &str, cells: &[Option<&str>], declared: bool) -> Result<Column> {
    let mut values = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        match c {
            None => values.push(f64::NAN),
            Some(text) => match text.parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) if declared => {
                    return Err(Error::ParseError {
                        row: i + 1,
                        col: name.to_string(),
                        msg: format!("cell {text:?} is not numeric"),
                    })
                }
                Err(_) => unreachable!("inference checked parseability"),
            },
        }
    }
    Ok(Column::numeric(name, values))
}

/// Normalizes a loaded target column to numeric class codes / raw values.
/// Text classification targets are coded in sorted-text order (row-order
/// independent); numeric classification targets must already be valid codes.
fn encode_target(col: Column, task: Task) -> Result<Column> {
    let name = col.name.clone();
    let parse_err = |row: usize, msg: String| Error::ParseError {
        row,
        col: name.clone(),
        msg,
    };
    let numeric = match col.kind() {
        ColumnKind::Numeric => col,
        ColumnKind::Categorical => {
            if task == Task::Regression {
                return Err(parse_err(0, "regression target is not numeric".into()));
            }
            let (dict, codes) = col.categorical_data()?;
            let mut sorted: Vec<&String> = dict.entries().iter().collect();
            sorted.sort();
            let code_of: BTreeMap<&str, f64> = sorted
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i as f64))
                .collect();
            let values = codes
                .iter()
                .map(|&c| {
                    if c == crate::table::MISSING_CODE {
                        f64::NAN
                    } else {
                        code_of[dict.entry(c)]
                    }
                })
                .collect();
            Column::numeric(&name, values)
        }
    };
    let (values, missing) = numeric.numeric_data()?;
    if let Some(row) = missing.iter().position(|&m| m) {
        return Err(parse_err(row + 1, "target value is missing".into()));
    }
    let k = match task {
        Task::Regression => return Ok(numeric),
        Task::Binary => 2,
        Task::Multiclass(k) => k,
    };
    for (i, &v) in values.iter().enumerate() {
        if v.fract() != 0.0 || v < 0.0 || v >= k as f64 {
            return Err(parse_err(
                i + 1,
                format!("class label {v} outside 0..{k}"),
            ));
        }
    }
    Ok(numeric)
}

/// Draft schema: inferred kinds for every column, default missing tokens,
/// no target/task — meant to be edited by the user.
pub fn infer_schema(path: &Path) -> Result<SchemaConfig> {
    let table = load_csv(path, &SchemaConfig::default())?;
    let mut schema = SchemaConfig::default();
    for c in table.columns() {
        schema.kinds.insert(c.name.clone(), c.kind());
    }
    Ok(schema)
}

/// Reference score population for percentile evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Leaderboard {
    pub scores: Vec<f64>,
    pub direction: Direction,
}

/// Loads the `score` column of a CSV; direction is explicit config, never
/// inferred from the metric name.
pub fn load_leaderboard(path: &Path, direction: Direction) -> Result<Leaderboard> {
    let (headers, rows) = read_raw(path)?;
    let idx = headers
        .iter()
        .position(|h| h == "score")
        .ok_or(Error::MissingScoreColumn)?;
    if rows.is_empty() {
        return Err(Error::MissingScoreColumn);
    }
    let mut scores = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let v: f64 = r[idx].parse().map_err(|_| Error::NonFiniteScore(i + 1))?;
        if !v.is_finite() {
            return Err(Error::NonFiniteScore(i + 1));
        }
        scores.push(v);
    }
    Ok(Leaderboard { scores, direction })
}

/// Writes a submission-shaped prediction file: `id,pred` for single-output
/// tasks, `id,class_0,...` for multiclass. Byte-identical across reruns.
pub fn write_predictions(
    path: &Path,
    ids: Option<&Column>,
    preds: &Predictions,
) -> Result<()> {
    let p = path.display().to_string();
    if let Some(ids) = ids {
        if ids.len() != preds.n_rows() {
            return Err(Error::LengthMismatch {
                expected: preds.n_rows(),
                got: ids.len(),
            });
        }
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_err(&p, e))?;
    let mut header = vec!["id".to_string()];
    if preds.n_cols() == 1 {
        header.push("pred".into());
    } else {
        header.extend((0..preds.n_cols()).map(|c| format!("class_{c}")));
    }
    w.write_record(&header).map_err(|e| map_csv_err(&p, e))?;
    for r in 0..preds.n_rows() {
        let id = match ids {
            Some(col) => col.cell_text(r).unwrap_or_default(),
            None => r.to_string(),
        };
        let mut rec = vec![id];
        rec.extend(preds.row(r).iter().map(|&v| format_f64(v)));
        w.write_record(&rec).map_err(|e| map_csv_err(&p, e))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// Writes a Table back to CSV: missing cells as empty fields, numerics in
/// shortest round-trip form, categoricals as their dictionary text.
pub fn write_table_csv(path: &Path, table: &Table) -> Result<()> {
    let p = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| map_csv_err(&p, e))?;
    w.write_record(table.column_names())
        .map_err(|e| map_csv_err(&p, e))?;
    for r in 0..table.n_rows() {
        let rec: Vec<String> = table
            .columns()
            .iter()
            .map(|c| c.cell_text(r).unwrap_or_default())
            .collect();
        w.write_record(&rec).map_err(|e| map_csv_err(&p, e))?;
    }
    w.flush().map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty JSON with a trailing newline; struct field order makes the bytes
/// stable across runs.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn mixed_kinds_inferred() {
        let f = write_tmp("x,y\n1,a\n2,b\n");
        let mut schema = SchemaConfig {
            target: Some("y".into()),
            task: Some(Task::Binary),
            ..Default::default()
        };
        let t = load_csv(f.path(), &schema).unwrap();
        assert_eq!(t.column("x").unwrap().kind(), ColumnKind::Numeric);
        // target was text: coded in sorted order a=0, b=1
        assert_eq!(t.target_values().unwrap(), vec![0.0, 1.0]);

        schema.target = None;
        schema.task = None;
        let t = load_csv(f.path(), &schema).unwrap();
        assert_eq!(t.column("y").unwrap().kind(), ColumnKind::Categorical);
    }

    #[test]
    fn sentinel_replacement() {
        let f = write_tmp("f\n-1\n3\n");
        let mut schema = SchemaConfig::default();
        schema.sentinels.insert("f".into(), vec!["-1".into()]);
        let t = load_csv(f.path(), &schema).unwrap();
        let c = t.column("f").unwrap();
        assert!(c.is_missing(0));
        assert_eq!(c.num(1), Some(3.0));
    }

    #[test]
    fn unparseable_cell_forces_categorical() {
        let f = write_tmp("c\n1\n2\nx\n");
        let t = load_csv(f.path(), &SchemaConfig::default()).unwrap();
        assert_eq!(t.column("c").unwrap().kind(), ColumnKind::Categorical);
    }

    #[test]
    fn declared_numeric_with_text_cell_errors() {
        let f = write_tmp("c\n1\nx\n");
        let mut schema = SchemaConfig::default();
        schema.kinds.insert("c".into(), ColumnKind::Numeric);
        assert!(matches!(
            load_csv(f.path(), &schema),
            Err(Error::ParseError { row: 2, .. })
        ));
    }

    #[test]
    fn missing_target_column() {
        let f = write_tmp("x\n1\n");
        let schema = SchemaConfig {
            target: Some("y".into()),
            task: Some(Task::Regression),
            ..Default::default()
        };
        assert!(matches!(
            load_csv(f.path(), &schema),
            Err(Error::MissingTarget(_))
        ));
    }

    #[test]
    fn ragged_row_rejected() {
        let f = write_tmp("a,b\n1,2\n3\n");
        assert!(matches!(
            load_csv(f.path(), &SchemaConfig::default()),
            Err(Error::RaggedRow { .. })
        ));
    }

    #[test]
    fn inference_is_row_order_insensitive() {
        let fwd = write_tmp("c\n1\n2\nx\n");
        let rev = write_tmp("c\nx\n2\n1\n");
        let a = infer_schema(fwd.path()).unwrap();
        let b = infer_schema(rev.path()).unwrap();
        assert_eq!(a.kinds, b.kinds);
    }

    #[test]
    fn leaderboard_contract() {
        let f = write_tmp("rank,score\n1,0.9\n2,0.8\n");
        let lb = load_leaderboard(f.path(), Direction::HigherBetter).unwrap();
        assert_eq!(lb.scores, vec![0.9, 0.8]);

        let no_col = write_tmp("a\n1\n");
        assert!(matches!(
            load_leaderboard(no_col.path(), Direction::HigherBetter),
            Err(Error::MissingScoreColumn)
        ));

        let inf = write_tmp("score\ninf\n");
        assert!(matches!(
            load_leaderboard(inf.path(), Direction::HigherBetter),
            Err(Error::NonFiniteScore(1))
        ));
    }

    #[test]
    fn predictions_file_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.csv");
        let ids = Column::numeric("id", vec![1.0, 2.0]);
        write_predictions(&path, Some(&ids), &Predictions::single(vec![0.5, 0.25]))
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "id,pred\n1,0.5\n2,0.25\n");

        let multi = Predictions::new(vec![0.2, 0.3, 0.5], 3).unwrap();
        let path3 = dir.path().join("pred3.csv");
        write_predictions(&path3, None, &multi).unwrap();
        let text = std::fs::read_to_string(&path3).unwrap();
        assert_eq!(text, "id,class_0,class_1,class_2\n0,0.2,0.3,0.5\n");
    }

    #[test]
    fn prediction_id_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ids = Column::numeric("id", vec![1.0]);
        assert!(matches!(
            write_predictions(
                &dir.path().join("p.csv"),
                Some(&ids),
                &Predictions::single(vec![0.5, 0.25])
            ),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn table_round_trip() {
        let f = write_tmp("num,cat\n1.5,a\n,b\n-3e2,\n");
        let schema = SchemaConfig::default();
        let t = load_csv(f.path(), &schema).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("back.csv");
        write_table_csv(&out, &t).unwrap();
        let t2 = load_csv(&out, &schema).unwrap();

        assert_eq!(t.schema(), t2.schema());
        for (a, b) in t.columns().iter().zip(t2.columns()) {
            for r in 0..t.n_rows() {
                assert_eq!(a.cell_text(r), b.cell_text(r));
            }
        }
    }

    #[test]
    fn shortest_round_trip_formatting() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -0.0, 12345.6789] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
