//! Encoders that turn categorical structure into model-ready columns:
//! frequency counts, one-hot, ordinal codes, rounding-based discretization,
//! tuple interactions, and label-occurrence categories.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::table::{Column, ColumnKind, Dict, Table, Task, MISSING_CODE};
use crate::util::fnv1a64;

use super::{
    categorical_col, numeric_col, CatInteractionParams, ColsParams, FitCtx, FitScope,
    FrequencyEncodeParams, NumToCatParams, OneHotParams, Split,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqCol {
    pub source: String,
    pub output: String,
    pub counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEncodeState {
    pub normalized: bool,
    pub scope_rows: usize,
    pub cols: Vec<FreqCol>,
}

fn count_frequencies(
    tables: &[&Table],
    cols: &[String],
    normalized: bool,
    prefix_tag: &str,
    ctx: &FitCtx,
) -> Result<FrequencyEncodeState> {
    let scope_rows = tables.iter().map(|t| t.n_rows()).sum();
    let mut out = Vec::new();
    for name in cols {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for t in tables {
            let c = categorical_col(t, name)?;
            for row in 0..t.n_rows() {
                if let Some(text) = c.text(row) {
                    *counts.entry(text.to_string()).or_insert(0) += 1;
                }
            }
        }
        out.push(FreqCol {
            source: name.clone(),
            output: ctx.name(&format!("{prefix_tag}.{name}")),
            counts,
        });
    }
    Ok(FrequencyEncodeState {
        normalized,
        scope_rows,
        cols: out,
    })
}

pub(super) fn fit_frequency_encode(
    ctx: &FitCtx,
    p: &FrequencyEncodeParams,
) -> Result<FrequencyEncodeState> {
    let tables = ctx.scope_tables()?;
    count_frequencies(&tables, &p.cols, p.normalized, "freq", ctx)
}

/// Planted bug for the leakage auditor: counts over train **and** test no
/// matter what scope the step declared.
pub(super) fn fit_debug_leaky_freq(
    ctx: &FitCtx,
    p: &ColsParams,
) -> Result<FrequencyEncodeState> {
    let mut tables = vec![ctx.train];
    if let Some(test) = ctx.test {
        tables.push(test);
    }
    count_frequencies(&tables, &p.cols, false, "leak", ctx)
}

pub(super) fn transform_frequency(s: &FrequencyEncodeState, t: &Table) -> Result<Table> {
    let mut new_cols = Vec::new();
    for fc in &s.cols {
        let c = categorical_col(t, &fc.source)?;
        let values: Vec<f64> = (0..t.n_rows())
            .map(|row| match c.text(row) {
                None => f64::NAN,
                Some(text) => {
                    let n = fc.counts.get(text).copied().unwrap_or(0) as f64;
                    if s.normalized {
                        n / s.scope_rows as f64
                    } else {
                        n
                    }
                }
            })
            .collect();
        new_cols.push(Column::numeric(fc.output.clone(), values));
    }
    t.append_columns(new_cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotCol {
    pub source: String,
    pub categories: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotState {
    pub cols: Vec<OneHotCol>,
}

/// Dictionary snapshot across the scope tables, train entries first, then
/// unseen test entries in their own first-appearance order.
fn scope_categories(tables: &[&Table], name: &str) -> Result<Vec<String>> {
    let mut seen = std::collections::HashSet::new();
    let mut cats = Vec::new();
    for t in tables {
        let (dict, _) = categorical_col(t, name)?.categorical_data()?;
        for e in dict.entries() {
            if seen.insert(e.clone()) {
                cats.push(e.clone());
            }
        }
    }
    Ok(cats)
}

pub(super) fn fit_one_hot(ctx: &FitCtx, p: &OneHotParams) -> Result<OneHotState> {
    let tables = ctx.scope_tables()?;
    let mut cols = Vec::new();
    for name in &p.cols {
        let categories = scope_categories(&tables, name)?;
        if categories.len() > p.max_cardinality {
            return Err(Error::CardinalityExceeded {
                col: name.clone(),
                got: categories.len(),
                max: p.max_cardinality,
            });
        }
        let outputs = categories
            .iter()
            .map(|cat| ctx.name(&format!("oh.{name}={cat}")))
            .collect();
        cols.push(OneHotCol {
            source: name.clone(),
            categories,
            outputs,
        });
    }
    Ok(OneHotState { cols })
}

pub(super) fn transform_one_hot(s: &OneHotState, t: &Table) -> Result<Table> {
    let mut out = t.clone();
    for oh in &s.cols {
        let c = categorical_col(&out, &oh.source)?;
        let texts: Vec<Option<&str>> = (0..out.n_rows()).map(|row| c.text(row)).collect();
        let mut new_cols = Vec::with_capacity(oh.categories.len());
        for (cat, output) in oh.categories.iter().zip(&oh.outputs) {
            let values = texts
                .iter()
                .map(|txt| match txt {
                    Some(s) if *s == cat => 1.0,
                    _ => 0.0,
                })
                .collect();
            new_cols.push(Column::numeric(output.clone(), values));
        }
        out = out.append_columns(new_cols)?;
        out = out.drop_columns(std::slice::from_ref(&oh.source))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalCol {
    pub source: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalEncodeState {
    pub cols: Vec<OrdinalCol>,
}

pub(super) fn fit_ordinal(ctx: &FitCtx, p: &ColsParams) -> Result<OrdinalEncodeState> {
    let names = super::cols_or_all(&p.cols, ctx.train, ColumnKind::Categorical);
    let tables = ctx.scope_tables()?;
    let mut cols = Vec::new();
    for name in &names {
        let categories = scope_categories(&tables, name)?;
        if categories.is_empty() {
            return Err(Error::EmptyDictionary(name.clone()));
        }
        cols.push(OrdinalCol {
            source: name.clone(),
            categories,
        });
    }
    Ok(OrdinalEncodeState { cols })
}

/// Replaces each source column in place with its dictionary code; unseen
/// categories become −1 and missing stays missing.
pub(super) fn transform_ordinal(s: &OrdinalEncodeState, t: &Table) -> Result<Table> {
    let mut out = t.clone();
    for oc in &s.cols {
        let index: BTreeMap<&str, usize> = oc
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let c = categorical_col(&out, &oc.source)?;
        let values: Vec<f64> = (0..out.n_rows())
            .map(|row| match c.text(row) {
                None => f64::NAN,
                Some(text) => index.get(text).map_or(-1.0, |&i| i as f64),
            })
            .collect();
        out = out.replace_column(Column::numeric(oc.source.clone(), values))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumToCatCol {
    pub source: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumToCatState {
    pub decimals: usize,
    pub cols: Vec<NumToCatCol>,
}

pub(super) fn fit_num_to_cat(ctx: &FitCtx, p: &NumToCatParams) -> Result<NumToCatState> {
    // Row-local: nothing is estimated, but inputs are checked up front.
    for name in &p.cols {
        numeric_col(ctx.train, name)?;
    }
    Ok(NumToCatState {
        decimals: p.decimals,
        cols: p
            .cols
            .iter()
            .map(|name| NumToCatCol {
                source: name.clone(),
                output: ctx.name(&format!("cat.{name}")),
            })
            .collect(),
    })
}

fn round_text(v: f64, decimals: usize) -> String {
    let scale = 10f64.powi(decimals as i32);
    let mut r = (v * scale).round() / scale;
    if r == 0.0 {
        // IEEE −0.0 == 0.0, so this also normalizes the negative zero.
        r = 0.0;
    }
    format!("{r:.decimals$}")
}

pub(super) fn transform_num_to_cat(s: &NumToCatState, t: &Table) -> Result<Table> {
    let mut new_cols = Vec::new();
    for nc in &s.cols {
        let c = numeric_col(t, &nc.source)?;
        let texts: Vec<Option<String>> = (0..t.n_rows())
            .map(|row| c.num(row).map(|v| round_text(v, s.decimals)))
            .collect();
        new_cols.push(Column::categorical_from_texts(nc.output.clone(), &texts));
    }
    t.append_columns(new_cols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatInteractionState {
    pub sources: Vec<String>,
    pub hashed: bool,
    pub n_buckets: u64,
    pub output: String,
}

pub(super) fn fit_cat_interaction(
    ctx: &FitCtx,
    p: &CatInteractionParams,
) -> Result<CatInteractionState> {
    for name in &p.cols {
        categorical_col(ctx.train, name)?;
    }
    let tag = if p.hashed { "xh" } else { "x" };
    Ok(CatInteractionState {
        sources: p.cols.clone(),
        hashed: p.hashed,
        n_buckets: p.n_buckets.unwrap_or(0),
        output: ctx.name(&format!("{tag}.{}", p.cols.join("*"))),
    })
}

/// Joins the k category texts with the ASCII unit separator; a separator
/// cannot occur in CSV-parsed text, so the join is collision-free.
const JOIN: char = '\u{1f}';

pub(super) fn transform_cat_interaction(s: &CatInteractionState, t: &Table) -> Result<Table> {
    let cols: Vec<&Column> = s
        .sources
        .iter()
        .map(|n| categorical_col(t, n))
        .collect::<Result<_>>()?;
    let mut texts: Vec<Option<String>> = Vec::with_capacity(t.n_rows());
    for row in 0..t.n_rows() {
        let mut parts = Vec::with_capacity(cols.len());
        let mut missing = false;
        for c in &cols {
            match c.text(row) {
                Some(s) => parts.push(s),
                None => {
                    missing = true;
                    break;
                }
            }
        }
        if missing {
            texts.push(None);
        } else {
            let joined = parts.join(&JOIN.to_string());
            if s.hashed {
                texts.push(Some((fnv1a64(joined.as_bytes()) % s.n_buckets).to_string()));
            } else {
                texts.push(Some(joined));
            }
        }
    }
    let col = Column::categorical_from_texts(s.output.clone(), &texts);
    t.append_columns(vec![col])
}

/// Per-value occurrence tallies: how often it appears in train, how many of
/// those train rows are positive, and how often it appears in test when the
/// scope includes test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccCounts {
    pub train: u64,
    pub pos: u64,
    pub test: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccCol {
    pub source: String,
    pub output: String,
    /// Keyed by the value's shortest round-trip decimal text, which is
    /// injective over f64, so exact value identity is preserved.
    pub counts: BTreeMap<String, OccCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueOccurrenceState {
    pub tta: bool,
    pub cols: Vec<OccCol>,
}

pub const OCCURRENCE_CATEGORIES: &[&str] = &[
    "unique_in_scope",
    "repeats_only_with_pos",
    "repeats_only_with_neg",
    "repeats_mixed",
];
pub const OCCURRENCE_CATEGORY_TTA: &str = "unique_in_train_plus_test";

pub(super) fn fit_value_occurrence(
    ctx: &FitCtx,
    p: &ColsParams,
) -> Result<ValueOccurrenceState> {
    let spec = ctx
        .train
        .target_spec
        .ok_or_else(|| Error::MissingTarget("occurrence labels need a target".into()))?;
    if spec.task != Task::Binary {
        return Err(Error::WrongTask {
            expected: "binary".into(),
            got: spec.task.to_string(),
        });
    }
    let y = ctx.train.target_values()?;
    let tta = ctx.scope == FitScope::TrainPlusTest;
    let test = if tta { Some(ctx.scope_tables()?[1]) } else { None };
    let mut cols = Vec::new();
    for name in &p.cols {
        let mut counts: BTreeMap<String, OccCounts> = BTreeMap::new();
        let c = numeric_col(ctx.train, name)?;
        for (row, &yv) in y.iter().enumerate() {
            if let Some(v) = c.num(row) {
                let e = counts.entry(format_f64(v)).or_insert(OccCounts {
                    train: 0,
                    pos: 0,
                    test: 0,
                });
                e.train += 1;
                if yv == 1.0 {
                    e.pos += 1;
                }
            }
        }
        if let Some(test) = test {
            let c = numeric_col(test, name)?;
            for row in 0..test.n_rows() {
                if let Some(v) = c.num(row) {
                    counts
                        .entry(format_f64(v))
                        .or_insert(OccCounts {
                            train: 0,
                            pos: 0,
                            test: 0,
                        })
                        .test += 1;
                }
            }
        }
        cols.push(OccCol {
            source: name.clone(),
            output: ctx.name(&format!("occ.{name}")),
            counts,
        });
    }
    Ok(ValueOccurrenceState { tta, cols })
}

/// Category from the tallies of *other* rows sharing the value: labeled
/// co-occurrences decide the repeats flavor, unlabeled (test) co-occurrences
/// keep the value merely "seen", and no co-occurrence at all is unique —
/// across train+test when the scope included test.
fn occurrence_category(
    others_pos: u64,
    others_neg: u64,
    others_unlabeled: u64,
    tta: bool,
) -> &'static str {
    if others_pos > 0 && others_neg > 0 {
        "repeats_mixed"
    } else if others_pos > 0 {
        "repeats_only_with_pos"
    } else if others_neg > 0 {
        "repeats_only_with_neg"
    } else if others_unlabeled > 0 || !tta {
        OCCURRENCE_CATEGORIES[0]
    } else {
        OCCURRENCE_CATEGORY_TTA
    }
}

pub(super) fn transform_value_occurrence(
    s: &ValueOccurrenceState,
    t: &Table,
    split: Split,
) -> Result<Table> {
    let mut entries: Vec<String> = OCCURRENCE_CATEGORIES.iter().map(|s| s.to_string()).collect();
    if s.tta {
        entries.push(OCCURRENCE_CATEGORY_TTA.to_string());
    }
    let dict = Arc::new(Dict::from_entries(entries)?);
    // A train row's own label must not influence its category, so its own
    // contribution is subtracted from the tallies before deciding.
    let y = match split {
        Split::Train => Some(t.target_values()?),
        Split::Test => None,
    };
    let mut new_cols = Vec::new();
    for oc in &s.cols {
        let c = numeric_col(t, &oc.source)?;
        let mut codes = Vec::with_capacity(t.n_rows());
        for row in 0..t.n_rows() {
            let code = match c.num(row) {
                None => MISSING_CODE,
                Some(v) => {
                    let counts = oc
                        .counts
                        .get(&format_f64(v))
                        .copied()
                        .unwrap_or(OccCounts {
                            train: 0,
                            pos: 0,
                            test: 0,
                        });
                    let (others_pos, others_neg, others_unlabeled) = match (&y, split) {
                        (Some(y), _) => {
                            let own_pos = u64::from(y[row] == 1.0);
                            let own_neg = u64::from(y[row] != 1.0);
                            (
                                counts.pos.saturating_sub(own_pos),
                                (counts.train - counts.pos).saturating_sub(own_neg),
                                counts.test,
                            )
                        }
                        (None, _) => (
                            counts.pos,
                            counts.train - counts.pos,
                            counts.test.saturating_sub(u64::from(s.tta)),
                        ),
                    };
                    let cat = occurrence_category(others_pos, others_neg, others_unlabeled, s.tta);
                    dict.code_of(cat).expect("category in fixed dictionary")
                }
            };
            codes.push(code);
        }
        new_cols.push(Column::categorical(
            oc.output.clone(),
            Arc::clone(&dict),
            codes,
        )?);
    }
    t.append_columns(new_cols)
}
