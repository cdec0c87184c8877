//! Columnar in-memory data model: typed columns with explicit missing-value
//! semantics, dictionary-encoded categoricals, and row/column selection.
//!
//! Tables are immutable after construction; every mutation builds a new
//! `Table`. Dictionaries are shared via `Arc` so row splits never re-encode.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved categorical code for a missing value. Never a dictionary entry.
pub const MISSING_CODE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

impl std::fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnKind::Numeric => write!(f, "numeric"),
            ColumnKind::Categorical => write!(f, "categorical"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Feature,
    Target,
    Id,
}

/// Category dictionary: entry text by code, with a reverse index.
/// Entries are unique; order is first-appearance order at construction.
#[derive(Debug, Default, Clone)]
pub struct Dict {
    entries: Vec<String>,
    index: HashMap<String, u32>,
}

impl Dict {
    pub fn new() -> Self {
        Dict::default()
    }

    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut d = Dict::new();
        for e in entries {
            let e = e.into();
            if d.index.contains_key(&e) {
                return Err(Error::DuplicateColumn(format!("dictionary entry {e}")));
            }
            d.intern(&e);
        }
        Ok(d)
    }

    /// Code for `text`, adding a new entry if absent.
    pub fn intern(&mut self, text: &str) -> u32 {
        if let Some(&c) = self.index.get(text) {
            return c;
        }
        let code = self.entries.len() as u32;
        assert!(code != MISSING_CODE, "dictionary full");
        self.entries.push(text.to_string());
        self.index.insert(text.to_string(), code);
        code
    }

    pub fn code_of(&self, text: &str) -> Option<u32> {
        self.index.get(text).copied()
    }

    pub fn entry(&self, code: u32) -> &str {
        &self.entries[code as usize]
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub enum ColumnData {
    /// `values[i]` is NaN wherever `missing[i]`; the flag is authoritative.
    Numeric { values: Vec<f64>, missing: Vec<bool> },
    /// `codes[i]` is either `< dict.len()` or `MISSING_CODE`.
    Categorical { dict: Arc<Dict>, codes: Vec<u32> },
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: String,
    pub role: Role,
    data: ColumnData,
}

impl Column {
    /// Numeric column; missing is derived from NaN values.
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Column {
        let missing = values.iter().map(|v| v.is_nan()).collect();
        Column {
            name: name.into(),
            role: Role::Feature,
            data: ColumnData::Numeric { values, missing },
        }
    }

    /// Numeric column with an explicit mask; flagged slots are canonicalized
    /// to NaN so the payload can never disagree with the mask.
    pub fn numeric_masked(
        name: impl Into<String>,
        mut values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Column> {
        if values.len() != missing.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                got: missing.len(),
            });
        }
        let mut missing = missing;
        for (v, m) in values.iter_mut().zip(missing.iter_mut()) {
            if *m {
                *v = f64::NAN;
            } else if v.is_nan() {
                *m = true;
            }
        }
        Ok(Column {
            name: name.into(),
            role: Role::Feature,
            data: ColumnData::Numeric { values, missing },
        })
    }

    /// Categorical column from optional texts; dictionary built in
    /// first-appearance order, `None` becomes the reserved missing code.
    pub fn categorical_from_texts<S: AsRef<str>>(
        name: impl Into<String>,
        texts: &[Option<S>],
    ) -> Column {
        let mut dict = Dict::new();
        let codes = texts
            .iter()
            .map(|t| match t {
                Some(s) => dict.intern(s.as_ref()),
                None => MISSING_CODE,
            })
            .collect();
        Column {
            name: name.into(),
            role: Role::Feature,
            data: ColumnData::Categorical {
                dict: Arc::new(dict),
                codes,
            },
        }
    }

    /// Categorical column from pre-encoded codes; codes must be valid.
    pub fn categorical(
        name: impl Into<String>,
        dict: Arc<Dict>,
        codes: Vec<u32>,
    ) -> Result<Column> {
        let name = name.into();
        if let Some(&bad) = codes
            .iter()
            .find(|&&c| c != MISSING_CODE && c as usize >= dict.len())
        {
            return Err(Error::LengthMismatch {
                expected: dict.len(),
                got: bad as usize,
            });
        }
        Ok(Column {
            name,
            role: Role::Feature,
            data: ColumnData::Categorical { dict, codes },
        })
    }

    pub fn with_role(mut self, role: Role) -> Column {
        self.role = role;
        self
    }

    pub fn kind(&self) -> ColumnKind {
        match self.data {
            ColumnData::Numeric { .. } => ColumnKind::Numeric,
            ColumnData::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Numeric { values, .. } => values.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &ColumnData {
        &self.data
    }

    /// Numeric payload or `KindMismatch`.
    pub fn numeric_data(&self) -> Result<(&[f64], &[bool])> {
        match &self.data {
            ColumnData::Numeric { values, missing } => Ok((values, missing)),
            _ => Err(Error::KindMismatch(self.name.clone())),
        }
    }

    /// Categorical payload or `KindMismatch`.
    pub fn categorical_data(&self) -> Result<(&Arc<Dict>, &[u32])> {
        match &self.data {
            ColumnData::Categorical { dict, codes } => Ok((dict, codes)),
            _ => Err(Error::KindMismatch(self.name.clone())),
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match &self.data {
            ColumnData::Numeric { missing, .. } => missing[row],
            ColumnData::Categorical { codes, .. } => codes[row] == MISSING_CODE,
        }
    }

    /// Numeric value at `row`, `None` when missing. Panics on categorical.
    pub fn num(&self, row: usize) -> Option<f64> {
        match &self.data {
            ColumnData::Numeric { values, missing } => {
                if missing[row] {
                    None
                } else {
                    Some(values[row])
                }
            }
            _ => panic!("num() on categorical column {}", self.name),
        }
    }

    /// Category text at `row`, `None` when missing. Panics on numeric.
    pub fn text(&self, row: usize) -> Option<&str> {
        match &self.data {
            ColumnData::Categorical { dict, codes } => {
                let c = codes[row];
                if c == MISSING_CODE {
                    None
                } else {
                    Some(dict.entry(c))
                }
            }
            _ => panic!("text() on numeric column {}", self.name),
        }
    }

    /// Cell rendered as text for hashing/joining: numeric via shortest
    /// round-trip formatting, categorical via dictionary; `None` if missing.
    pub fn cell_text(&self, row: usize) -> Option<String> {
        match &self.data {
            ColumnData::Numeric { values, missing } => {
                if missing[row] {
                    None
                } else {
                    Some(crate::io::format_f64(values[row]))
                }
            }
            ColumnData::Categorical { dict, codes } => {
                let c = codes[row];
                if c == MISSING_CODE {
                    None
                } else {
                    Some(dict.entry(c).to_string())
                }
            }
        }
    }

    /// New column with the rows at `idx`, preserving name/role; dictionaries
    /// are shared, not rebuilt.
    pub fn take_rows(&self, idx: &[usize]) -> Column {
        let data = match &self.data {
            ColumnData::Numeric { values, missing } => ColumnData::Numeric {
                values: idx.iter().map(|&i| values[i]).collect(),
                missing: idx.iter().map(|&i| missing[i]).collect(),
            },
            ColumnData::Categorical { dict, codes } => ColumnData::Categorical {
                dict: Arc::clone(dict),
                codes: idx.iter().map(|&i| codes[i]).collect(),
            },
        };
        Column {
            name: self.name.clone(),
            role: self.role,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Binary,
    Multiclass(usize),
}

impl Task {
    pub fn is_classification(&self) -> bool {
        !matches!(self, Task::Regression)
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Binary => 2,
            Task::Multiclass(k) => *k,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::Regression => write!(f, "regression"),
            Task::Binary => write!(f, "binary"),
            Task::Multiclass(k) => write!(f, "multiclass({k})"),
        }
    }
}

/// Target transform applied during preprocessing; predictions are mapped back
/// through the inverse before they leave the engine.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetTransform {
    #[default]
    None,
    Log1p,
    Standardize {
        mean: f64,
        std: f64,
    },
}

impl TargetTransform {
    pub fn apply(&self, y: f64) -> f64 {
        match self {
            TargetTransform::None => y,
            TargetTransform::Log1p => y.ln_1p(),
            TargetTransform::Standardize { mean, std } => (y - mean) / std,
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        match self {
            TargetTransform::None => z,
            TargetTransform::Log1p => z.exp_m1(),
            TargetTransform::Standardize { mean, std } => z * std + mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub task: Task,
    #[serde(default)]
    pub transform: TargetTransform,
    /// Declared heavy-tailed target: the standardized pipeline's log step
    /// applies only when this is set (regression only).
    #[serde(default)]
    pub log_target: bool,
}

impl TargetSpec {
    pub fn new(task: Task) -> TargetSpec {
        TargetSpec {
            task,
            transform: TargetTransform::None,
            log_target: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    columns: Vec<Column>,
    n_rows: usize,
    pub target_spec: Option<TargetSpec>,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Table> {
        let n_rows = columns.first().map_or(0, Column::len);
        let mut seen = HashMap::new();
        let mut targets = 0usize;
        for (i, c) in columns.iter().enumerate() {
            if c.len() != n_rows {
                return Err(Error::RowCountMismatch {
                    expected: n_rows,
                    got: c.len(),
                });
            }
            if seen.insert(c.name.clone(), i).is_some() {
                return Err(Error::DuplicateColumn(c.name.clone()));
            }
            if c.role == Role::Target {
                targets += 1;
            }
        }
        if targets > 1 {
            return Err(Error::MultipleTargets);
        }
        Ok(Table {
            columns,
            n_rows,
            target_spec: None,
        })
    }

    pub fn with_target_spec(mut self, spec: TargetSpec) -> Table {
        self.target_spec = Some(spec);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// Columns with role `Feature`, in table order.
    pub fn feature_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(|c| c.role == Role::Feature)
    }

    pub fn target_column(&self) -> Option<&Column> {
        self.columns.iter().find(|c| c.role == Role::Target)
    }

    pub fn id_column(&self) -> Option<&Column> {
        self.columns.iter().find(|c| c.role == Role::Id)
    }

    /// Exactly the named columns, in the given order.
    pub fn select_columns(&self, names: &[&str]) -> Result<Table> {
        let mut seen = HashMap::new();
        let mut cols = Vec::with_capacity(names.len());
        for &n in names {
            if seen.insert(n, ()).is_some() {
                return Err(Error::DuplicateSelection(n.to_string()));
            }
            cols.push(self.column(n)?.clone());
        }
        Ok(Table {
            columns: cols,
            n_rows: self.n_rows,
            target_spec: self.target_spec,
        })
    }

    /// Appends new columns with role `Feature`; originals untouched.
    pub fn append_columns(&self, new: Vec<Column>) -> Result<Table> {
        let mut out = self.clone();
        for mut c in new {
            if c.len() != self.n_rows {
                return Err(Error::RowCountMismatch {
                    expected: self.n_rows,
                    got: c.len(),
                });
            }
            if out.has_column(&c.name) {
                return Err(Error::DuplicateColumn(c.name));
            }
            c.role = Role::Feature;
            out.columns.push(c);
        }
        Ok(out)
    }

    /// Replaces the column with the same name in place, keeping table order
    /// and the existing role.
    pub fn replace_column(&self, col: Column) -> Result<Table> {
        if col.len() != self.n_rows {
            return Err(Error::RowCountMismatch {
                expected: self.n_rows,
                got: col.len(),
            });
        }
        let idx = self
            .columns
            .iter()
            .position(|c| c.name == col.name)
            .ok_or_else(|| Error::UnknownColumn(col.name.clone()))?;
        let mut out = self.clone();
        let role = out.columns[idx].role;
        out.columns[idx] = col.with_role(role);
        Ok(out)
    }

    pub fn drop_columns(&self, names: &[String]) -> Result<Table> {
        for n in names {
            self.column(n)?;
        }
        let mut out = self.clone();
        out.columns.retain(|c| !names.contains(&c.name));
        Ok(out)
    }

    /// Rows where mask is true, then rows where it is false; order preserved,
    /// dictionaries shared between both halves.
    pub fn split_rows(&self, mask: &[bool]) -> Result<(Table, Table)> {
        if mask.len() != self.n_rows {
            return Err(Error::LengthMismatch {
                expected: self.n_rows,
                got: mask.len(),
            });
        }
        let idx_true: Vec<usize> = (0..self.n_rows).filter(|&i| mask[i]).collect();
        let idx_false: Vec<usize> = (0..self.n_rows).filter(|&i| !mask[i]).collect();
        Ok((self.take_rows(&idx_true), self.take_rows(&idx_false)))
    }

    /// Inverse of `split_rows`: interleaves the two halves back by mask order.
    pub fn unsplit_rows(mask: &[bool], on: &Table, off: &Table) -> Result<Table> {
        let n = mask.len();
        let n_on = mask.iter().filter(|&&m| m).count();
        if on.n_rows != n_on || off.n_rows != n - n_on {
            return Err(Error::RowCountMismatch {
                expected: n,
                got: on.n_rows + off.n_rows,
            });
        }
        let mut idx_in_source = Vec::with_capacity(n);
        let (mut i_on, mut i_off) = (0usize, 0usize);
        for &m in mask {
            if m {
                idx_in_source.push((true, i_on));
                i_on += 1;
            } else {
                idx_in_source.push((false, i_off));
                i_off += 1;
            }
        }
        let columns = on
            .columns
            .iter()
            .zip(off.columns.iter())
            .map(|(a, b)| {
                let data = match (&a.data, &b.data) {
                    (
                        ColumnData::Numeric {
                            values: va,
                            missing: ma,
                        },
                        ColumnData::Numeric {
                            values: vb,
                            missing: mb,
                        },
                    ) => {
                        let mut values = Vec::with_capacity(n);
                        let mut missing = Vec::with_capacity(n);
                        for &(from_on, i) in &idx_in_source {
                            if from_on {
                                values.push(va[i]);
                                missing.push(ma[i]);
                            } else {
                                values.push(vb[i]);
                                missing.push(mb[i]);
                            }
                        }
                        ColumnData::Numeric { values, missing }
                    }
                    (
                        ColumnData::Categorical {
                            dict,
                            codes: ca,
                        },
                        ColumnData::Categorical { codes: cb, .. },
                    ) => {
                        let codes = idx_in_source
                            .iter()
                            .map(|&(from_on, i)| if from_on { ca[i] } else { cb[i] })
                            .collect();
                        ColumnData::Categorical {
                            dict: Arc::clone(dict),
                            codes,
                        }
                    }
                    _ => return Err(Error::KindMismatch(a.name.clone())),
                };
                Ok(Column {
                    name: a.name.clone(),
                    role: a.role,
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Table {
            columns,
            n_rows: n,
            target_spec: on.target_spec.or(off.target_spec),
        })
    }

    pub fn take_rows(&self, idx: &[usize]) -> Table {
        Table {
            columns: self.columns.iter().map(|c| c.take_rows(idx)).collect(),
            n_rows: idx.len(),
            target_spec: self.target_spec,
        }
    }

    /// Target values as f64 (class codes for classification). Errors if no
    /// target column or any target value is missing.
    pub fn target_values(&self) -> Result<Vec<f64>> {
        let col = self
            .target_column()
            .ok_or_else(|| Error::UnknownColumn("<target>".into()))?;
        let (values, missing) = col.numeric_data()?;
        if missing.iter().any(|&m| m) {
            return Err(Error::MissingTarget(col.name.clone()));
        }
        Ok(values.to_vec())
    }

    /// Ordered (name, kind) schema fingerprint input.
    pub fn schema(&self) -> Vec<(String, ColumnKind)> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.kind()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        Table::new(vec![
            Column::numeric("a", vec![1.0, f64::NAN, 3.0]),
            Column::categorical_from_texts("b", &[Some("x"), None, Some("x")]),
        ])
        .unwrap()
    }

    #[test]
    fn numeric_missing_derived_from_nan() {
        let t = sample();
        let c = t.column("a").unwrap();
        assert_eq!(c.num(0), Some(1.0));
        assert_eq!(c.num(1), None);
        assert!(c.is_missing(1));
    }

    #[test]
    fn masked_constructor_canonicalizes_nan() {
        let c =
            Column::numeric_masked("a", vec![1.0, 2.0], vec![false, true]).unwrap();
        let (values, missing) = c.numeric_data().unwrap();
        assert!(values[1].is_nan());
        assert!(missing[1]);
    }

    #[test]
    fn categorical_dictionary_first_appearance_order() {
        let c = Column::categorical_from_texts(
            "c",
            &[Some("b"), Some("a"), Some("b"), None],
        );
        let (dict, codes) = c.categorical_data().unwrap();
        assert_eq!(dict.entries(), &["b".to_string(), "a".to_string()]);
        assert_eq!(codes, &[0, 1, 0, MISSING_CODE]);
        assert_eq!(c.text(3), None);
    }

    #[test]
    fn select_columns_projection() {
        let t = Table::new(vec![
            Column::numeric("a", vec![1.0]),
            Column::numeric("b", vec![2.0]),
            Column::numeric("c", vec![3.0]),
        ])
        .unwrap();
        let s = t.select_columns(&["b"]).unwrap();
        assert_eq!(s.column_names(), vec!["b"]);
        assert_eq!(s.n_rows(), 1);
    }

    #[test]
    fn select_columns_duplicate_rejected() {
        let t = Table::new(vec![Column::numeric("a", vec![1.0])]).unwrap();
        assert!(matches!(
            t.select_columns(&["a", "a"]),
            Err(Error::DuplicateSelection(_))
        ));
    }

    #[test]
    fn select_columns_unknown_rejected() {
        let t = Table::new(vec![
            Column::numeric("a", vec![1.0]),
            Column::numeric("b", vec![2.0]),
        ])
        .unwrap();
        assert!(matches!(
            t.select_columns(&["z"]),
            Err(Error::UnknownColumn(n)) if n == "z"
        ));
    }

    #[test]
    fn append_columns_contract() {
        let t = Table::new(vec![Column::numeric("a", vec![1.0, 2.0, 3.0])]).unwrap();
        let t2 = t
            .append_columns(vec![Column::numeric("b", vec![4.0, 5.0, 6.0])])
            .unwrap();
        assert_eq!(t2.n_cols(), 2);
        assert_eq!(t2.column("b").unwrap().role, Role::Feature);

        assert!(matches!(
            t.append_columns(vec![Column::numeric("b", vec![1.0; 4])]),
            Err(Error::RowCountMismatch { .. })
        ));
        assert!(matches!(
            t.append_columns(vec![Column::numeric("a", vec![1.0; 3])]),
            Err(Error::DuplicateColumn(_))
        ));
    }

    #[test]
    fn split_rows_partitions_and_shares_dict() {
        let t = Table::new(vec![
            Column::numeric("a", vec![1.0, 2.0, 3.0, 4.0]),
            Column::categorical_from_texts(
                "b",
                &[Some("p"), Some("q"), Some("p"), Some("r")],
            ),
        ])
        .unwrap();
        let (on, off) = t.split_rows(&[true, true, false, false]).unwrap();
        assert_eq!(on.n_rows(), 2);
        assert_eq!(off.n_rows(), 2);
        let (d_on, _) = on.column("b").unwrap().categorical_data().unwrap();
        let (d_off, _) = off.column("b").unwrap().categorical_data().unwrap();
        assert!(Arc::ptr_eq(d_on, d_off));
        assert_eq!(off.column("b").unwrap().text(0), Some("p"));
    }

    #[test]
    fn split_rows_all_true() {
        let t = sample();
        let (on, off) = t.split_rows(&[true; 3]).unwrap();
        assert_eq!(on.n_rows(), 3);
        assert_eq!(off.n_rows(), 0);
    }

    #[test]
    fn split_rows_length_mismatch() {
        let t = sample();
        assert!(matches!(
            t.split_rows(&[true, false]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn at_most_one_target() {
        let err = Table::new(vec![
            Column::numeric("a", vec![1.0]).with_role(Role::Target),
            Column::numeric("b", vec![1.0]).with_role(Role::Target),
        ]);
        assert!(matches!(err, Err(Error::MultipleTargets)));
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = Table::new(vec![
            Column::numeric("a", vec![1.0]),
            Column::numeric("a", vec![2.0]),
        ]);
        assert!(matches!(err, Err(Error::DuplicateColumn(_))));
    }

    #[test]
    fn target_transform_round_trip() {
        for y in [0.1, 10.0, 1e6] {
            let t = TargetTransform::Log1p;
            assert!((t.invert(t.apply(y)) - y).abs() / y < 1e-12);
        }
        let t = TargetTransform::Standardize {
            mean: 3.0,
            std: 2.0,
        };
        assert_eq!(t.apply(5.0), 1.0);
        assert_eq!(t.invert(1.0), 5.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_table() -> impl Strategy<Value = (Table, Vec<bool>)> {
            (1usize..40).prop_flat_map(|n| {
                let nums = proptest::collection::vec(
                    prop_oneof![Just(f64::NAN), -1e6..1e6f64],
                    n,
                );
                let cats = proptest::collection::vec(
                    proptest::option::of(prop_oneof![
                        Just("a".to_string()),
                        Just("b".to_string()),
                        Just("c".to_string())
                    ]),
                    n,
                );
                let mask = proptest::collection::vec(any::<bool>(), n);
                (nums, cats, mask).prop_map(|(nums, cats, mask)| {
                    let t = Table::new(vec![
                        Column::numeric("x", nums),
                        Column::categorical_from_texts("y", &cats),
                    ])
                    .unwrap();
                    (t, mask)
                })
            })
        }

        proptest! {
            #[test]
            fn split_then_unsplit_reconstructs((t, mask) in arb_table()) {
                let (on, off) = t.split_rows(&mask).unwrap();
                let back = Table::unsplit_rows(&mask, &on, &off).unwrap();
                prop_assert_eq!(back.n_rows(), t.n_rows());
                for (a, b) in t.columns().iter().zip(back.columns().iter()) {
                    prop_assert_eq!(&a.name, &b.name);
                    for r in 0..t.n_rows() {
                        prop_assert_eq!(a.cell_text(r), b.cell_text(r));
                    }
                }
            }

            #[test]
            fn split_preserves_decode((t, mask) in arb_table()) {
                let col = t.column("y").unwrap();
                let (on, off) = t.split_rows(&mask).unwrap();
                let mut i_on = 0usize;
                let mut i_off = 0usize;
                for (r, &on_side) in mask.iter().enumerate() {
                    let half = if on_side {
                        let v = on.column("y").unwrap().text(i_on).map(str::to_string);
                        i_on += 1;
                        v
                    } else {
                        let v = off.column("y").unwrap().text(i_off).map(str::to_string);
                        i_off += 1;
                        v
                    };
                    prop_assert_eq!(col.text(r).map(str::to_string), half);
                }
            }
        }
    }
}
