//! Row-combining operators: arithmetic pairs, per-group aggregates
//! broadcast back to rows, row-wise statistics, and binary conjunction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Column, Table};

use super::{
    categorical_col, numeric_col, percentile_in, ArithCombineParams, ColsParams, FitCtx,
    GroupbyAggParams, RowStatsParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithTerm {
    pub a: String,
    pub b: String,
    pub op: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArithCombineState {
    pub terms: Vec<ArithTerm>,
}

pub(super) fn fit_arith(ctx: &FitCtx, p: &ArithCombineParams) -> Result<ArithCombineState> {
    let mut terms = Vec::new();
    for pair in &p.pairs {
        numeric_col(ctx.train, &pair[0])?;
        numeric_col(ctx.train, &pair[1])?;
        for op in &p.ops {
            terms.push(ArithTerm {
                a: pair[0].clone(),
                b: pair[1].clone(),
                op: op.clone(),
                output: ctx.name(&format!("arith.{}{}{}", pair[0], op, pair[1])),
            });
        }
    }
    Ok(ArithCombineState { terms })
}

pub(super) fn transform_arith(s: &ArithCombineState, t: &Table) -> Result<Table> {
    let mut new_cols = Vec::new();
    for term in &s.terms {
        let a = numeric_col(t, &term.a)?;
        let b = numeric_col(t, &term.b)?;
        let values: Vec<f64> = (0..t.n_rows())
            .map(|row| match (a.num(row), b.num(row)) {
                (Some(x), Some(y)) => match term.op.as_str() {
                    "+" => x + y,
                    "-" => x - y,
                    "*" => x * y,
                    // Near-zero denominators become missing, not ±inf.
                    "/" if y.abs() < 1e-12 => f64::NAN,
                    "/" => x / y,
                    other => unreachable!("op `{other}` rejected at parse"),
                },
                _ => f64::NAN,
            })
            .collect();
        new_cols.push(Column::numeric(term.output.clone(), values));
    }
    t.append_columns(new_cols)
}

/// Aggregates of one group's scope values. `mean`/`std` are `None` when the
/// group had no non-missing values; `values` is kept (sorted) only when a
/// percentile rank was requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupbyAggState {
    pub group_col: String,
    pub value_col: String,
    pub stats: Vec<String>,
    pub outputs: Vec<String>,
    pub groups: BTreeMap<String, GroupInfo>,
}

pub(super) fn fit_groupby(ctx: &FitCtx, p: &GroupbyAggParams) -> Result<GroupbyAggState> {
    let tables = ctx.scope_tables()?;
    let keep_values = p.stats.iter().any(|s| s == "percentile_rank");
    let mut values_by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut sizes: BTreeMap<String, u64> = BTreeMap::new();
    for t in &tables {
        let g = categorical_col(t, &p.group_col)?;
        let v = numeric_col(t, &p.value_col)?;
        for row in 0..t.n_rows() {
            let Some(key) = g.text(row) else { continue };
            *sizes.entry(key.to_string()).or_insert(0) += 1;
            if let Some(x) = v.num(row) {
                values_by_group.entry(key.to_string()).or_default().push(x);
            }
        }
    }
    let mut groups = BTreeMap::new();
    for (key, count) in sizes {
        let mut vals = values_by_group.remove(&key).unwrap_or_default();
        vals.sort_by(f64::total_cmp);
        let (mean, std) = if vals.is_empty() {
            (None, None)
        } else {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let ss = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            (Some(m), Some((ss / vals.len() as f64).sqrt()))
        };
        groups.insert(
            key,
            GroupInfo {
                mean,
                std,
                count,
                values: if keep_values { vals } else { Vec::new() },
            },
        );
    }
    let outputs = p
        .stats
        .iter()
        .map(|s| ctx.name(&format!("g.{}.by.{}.{s}", p.value_col, p.group_col)))
        .collect();
    Ok(GroupbyAggState {
        group_col: p.group_col.clone(),
        value_col: p.value_col.clone(),
        stats: p.stats.clone(),
        outputs,
        groups,
    })
}

pub(super) fn transform_groupby(s: &GroupbyAggState, t: &Table) -> Result<Table> {
    let g = categorical_col(t, &s.group_col)?;
    let v = numeric_col(t, &s.value_col)?;
    let mut new_cols = Vec::new();
    for (stat, output) in s.stats.iter().zip(&s.outputs) {
        let values: Vec<f64> = (0..t.n_rows())
            .map(|row| {
                let Some(key) = g.text(row) else {
                    return f64::NAN;
                };
                let Some(info) = s.groups.get(key) else {
                    // Unseen group: no statistic to broadcast.
                    return f64::NAN;
                };
                match stat.as_str() {
                    "mean" => info.mean.unwrap_or(f64::NAN),
                    "std" => info.std.unwrap_or(f64::NAN),
                    "count" => info.count as f64,
                    "percentile_rank" => match v.num(row) {
                        Some(x) if !info.values.is_empty() => percentile_in(&info.values, x),
                        _ => f64::NAN,
                    },
                    other => unreachable!("stat `{other}` rejected at parse"),
                }
            })
            .collect();
        new_cols.push(Column::numeric(output.clone(), values));
    }
    t.append_columns(new_cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStat {
    NanCount,
    ZeroCount,
    ValueCount(f64),
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowStatsState {
    pub cols: Vec<String>,
    pub stat: RowStat,
    pub output: String,
}

pub(super) fn fit_row_stats(ctx: &FitCtx, p: &RowStatsParams) -> Result<RowStatsState> {
    for name in &p.cols {
        numeric_col(ctx.train, name)?;
    }
    let (stat, suffix) = match p.stat.as_str() {
        "nan_count" => (RowStat::NanCount, "row.nan_count".to_string()),
        "zero_count" => (RowStat::ZeroCount, "row.zero_count".to_string()),
        "sum" => (RowStat::Sum, "row.sum".to_string()),
        "value_count" => {
            let v = p.value.expect("checked at parse");
            (
                RowStat::ValueCount(v),
                format!("row.value_count_{}", crate::io::format_f64(v)),
            )
        }
        other => unreachable!("stat `{other}` rejected at parse"),
    };
    Ok(RowStatsState {
        cols: p.cols.clone(),
        stat,
        output: ctx.name(&suffix),
    })
}

pub(super) fn transform_row_stats(s: &RowStatsState, t: &Table) -> Result<Table> {
    let cols: Vec<&Column> = s
        .cols
        .iter()
        .map(|n| numeric_col(t, n))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = (0..t.n_rows())
        .map(|row| {
            let mut acc = 0.0;
            for c in &cols {
                let v = c.num(row);
                acc += match s.stat {
                    RowStat::NanCount => f64::from(v.is_none()),
                    RowStat::ZeroCount => f64::from(v == Some(0.0)),
                    RowStat::ValueCount(target) => f64::from(v == Some(target)),
                    RowStat::Sum => v.unwrap_or(0.0),
                };
            }
            acc
        })
        .collect();
    t.append_columns(vec![Column::numeric(s.output.clone(), values)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicalAndState {
    pub cols: Vec<String>,
    pub output: String,
}

pub(super) fn fit_logical_and(ctx: &FitCtx, p: &ColsParams) -> Result<LogicalAndState> {
    // The conjunction is row-local; scope only matters for the 0/1 check.
    for t in ctx.scope_tables()? {
        for name in &p.cols {
            let (values, missing) = numeric_col(t, name)?.numeric_data()?;
            for (v, &m) in values.iter().zip(missing) {
                if !m && *v != 0.0 && *v != 1.0 {
                    return Err(Error::NonBinary(name.clone()));
                }
            }
        }
    }
    Ok(LogicalAndState {
        cols: p.cols.clone(),
        output: ctx.name(&format!("and.{}", p.cols.join("&"))),
    })
}

pub(super) fn transform_logical_and(s: &LogicalAndState, t: &Table) -> Result<Table> {
    let cols: Vec<&Column> = s
        .cols
        .iter()
        .map(|n| numeric_col(t, n))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = (0..t.n_rows())
        .map(|row| {
            let mut acc = 1.0;
            for c in &cols {
                match c.num(row) {
                    Some(v) => acc *= v,
                    None => return f64::NAN,
                }
            }
            acc
        })
        .collect();
    t.append_columns(vec![Column::numeric(s.output.clone(), values)])
}
