//! Column-selection operators: correlation-based pruning, dropping features
//! with too few positive-target occurrences, and explicit keep lists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{ColumnKind, Table, Task};

use super::basic::DropColumnsState;
use super::{
    feature_col, DropCorrelatedParams, DropLowSupportParams, FeatureSelectParams, FitCtx,
};

/// Pearson correlation over rows where both sides are present; pairs with
/// fewer than two complete rows or a degenerate side count as uncorrelated.
fn pearson(ax: &[f64], mx: &[bool], ay: &[f64], my: &[bool]) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..ax.len() {
        if !mx[i] && !my[i] {
            xs.push(ax[i]);
            ys.push(ay[i]);
        }
    }
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

pub(super) fn fit_drop_correlated(
    ctx: &FitCtx,
    p: &DropCorrelatedParams,
) -> Result<DropColumnsState> {
    let tables = ctx.scope_tables()?;
    // Pool each numeric feature's scope rows once, in train table order.
    let mut names = Vec::new();
    let mut data: Vec<(Vec<f64>, Vec<bool>)> = Vec::new();
    for col in ctx.train.feature_columns() {
        if col.kind() != ColumnKind::Numeric {
            continue;
        }
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for t in &tables {
            let (v, m) = t.column(&col.name)?.numeric_data()?;
            values.extend_from_slice(v);
            missing.extend_from_slice(m);
        }
        names.push(col.name.clone());
        data.push((values, missing));
    }
    let mut drop = vec![false; names.len()];
    for i in 0..names.len() {
        if drop[i] {
            continue;
        }
        for j in (i + 1)..names.len() {
            if drop[j] {
                continue;
            }
            let r = pearson(&data[i].0, &data[i].1, &data[j].0, &data[j].1);
            if r.abs() > p.threshold {
                drop[j] = true;
            }
        }
    }
    Ok(DropColumnsState {
        dropped: names
            .into_iter()
            .zip(drop)
            .filter(|(_, d)| *d)
            .map(|(n, _)| n)
            .collect(),
    })
}

pub(super) fn fit_drop_low_support(
    ctx: &FitCtx,
    p: &DropLowSupportParams,
) -> Result<DropColumnsState> {
    let spec = ctx
        .train
        .target_spec
        .ok_or_else(|| Error::MissingTarget("support counts need a target".into()))?;
    if spec.task != Task::Binary {
        return Err(Error::WrongTask {
            expected: "binary".into(),
            got: spec.task.to_string(),
        });
    }
    // Support is "positive rows where the feature is active", which only
    // train rows can witness — labels exist nowhere else.
    let y = ctx.train.target_values()?;
    let mut dropped = Vec::new();
    for col in ctx.train.feature_columns() {
        let mut pos = 0usize;
        for (row, &yv) in y.iter().enumerate() {
            if yv != 1.0 {
                continue;
            }
            let active = match col.kind() {
                ColumnKind::Numeric => col.num(row).is_some_and(|v| v != 0.0),
                ColumnKind::Categorical => !col.is_missing(row),
            };
            if active {
                pos += 1;
                if pos >= p.min_pos {
                    break;
                }
            }
        }
        if pos < p.min_pos {
            dropped.push(col.name.clone());
        }
    }
    Ok(DropColumnsState { dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelectState {
    pub keep: Vec<String>,
}

pub(super) fn fit_feature_select(
    ctx: &FitCtx,
    p: &FeatureSelectParams,
) -> Result<FeatureSelectState> {
    for name in &p.keep {
        feature_col(ctx.train, name)?;
    }
    Ok(FeatureSelectState {
        keep: p.keep.clone(),
    })
}

/// Keeps exactly the listed feature columns; target and id pass through.
pub(super) fn transform_feature_select(s: &FeatureSelectState, t: &Table) -> Result<Table> {
    for name in &s.keep {
        feature_col(t, name)?;
    }
    let dropped: Vec<String> = t
        .feature_columns()
        .filter(|c| !s.keep.contains(&c.name))
        .map(|c| c.name.clone())
        .collect();
    t.drop_columns(&dropped)
}
