//! Column-statistic operators: imputation, missing-category recoding,
//! constant dropping, target transforms, standardization, rank-gaussian
//! normalization, and unique-value smoothing.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::io::format_f64;
use crate::table::{
    Column, ColumnKind, Dict, Table, TargetTransform, Task, MISSING_CODE,
};

use super::{
    categorical_col, check_unique, mean_std, numeric_col, ColsParams, FitCtx, FitScope,
    LogTargetParams, Split, StandardizeParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeMeanState {
    pub means: BTreeMap<String, f64>,
}

pub(super) fn fit_impute_mean(ctx: &FitCtx, p: &ColsParams) -> Result<ImputeMeanState> {
    check_unique(&p.cols)?;
    let cols = super::cols_or_all(&p.cols, ctx.train, ColumnKind::Numeric);
    let tables = ctx.scope_tables()?;
    let mut means = BTreeMap::new();
    for name in &cols {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in &tables {
            let (values, missing) = numeric_col(t, name)?.numeric_data()?;
            for (v, &m) in values.iter().zip(missing) {
                if !m {
                    sum += v;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::AllMissingColumn(name.clone()));
        }
        means.insert(name.clone(), sum / n as f64);
    }
    Ok(ImputeMeanState { means })
}

pub(super) fn transform_impute_mean(s: &ImputeMeanState, t: &Table) -> Result<Table> {
    let mut out = t.clone();
    for (name, &mean) in &s.means {
        let (values, missing) = numeric_col(&out, name)?.numeric_data()?;
        if !missing.contains(&true) {
            continue;
        }
        let filled = values
            .iter()
            .zip(missing)
            .map(|(&v, &m)| if m { mean } else { v })
            .collect();
        out = out.replace_column(Column::numeric(name.clone(), filled))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingAsCategoryState {
    /// Column → dictionary entry that stands in for a missing value.
    pub sentinels: BTreeMap<String, String>,
}

const MISSING_SENTINEL: &str = "\u{ab}missing\u{bb}";

pub(super) fn fit_missing_as_category(
    ctx: &FitCtx,
    p: &ColsParams,
) -> Result<MissingAsCategoryState> {
    check_unique(&p.cols)?;
    let cols = super::cols_or_all(&p.cols, ctx.train, ColumnKind::Categorical);
    let tables = ctx.scope_tables()?;
    let mut sentinels = BTreeMap::new();
    for name in &cols {
        let mut taken = std::collections::HashSet::new();
        for t in &tables {
            let (dict, _) = categorical_col(t, name)?.categorical_data()?;
            taken.extend(dict.entries().iter().cloned());
        }
        // Suffix until the sentinel cannot collide with a real category.
        let mut sentinel = MISSING_SENTINEL.to_string();
        let mut i = 1usize;
        while taken.contains(&sentinel) {
            i += 1;
            sentinel = format!("{MISSING_SENTINEL}{i}");
        }
        sentinels.insert(name.clone(), sentinel);
    }
    Ok(MissingAsCategoryState { sentinels })
}

pub(super) fn transform_missing_as_category(
    s: &MissingAsCategoryState,
    t: &Table,
) -> Result<Table> {
    let mut out = t.clone();
    for (name, sentinel) in &s.sentinels {
        let (dict, codes) = categorical_col(&out, name)?.categorical_data()?;
        if !codes.contains(&MISSING_CODE) {
            continue;
        }
        let (new_dict, code) = match dict.code_of(sentinel) {
            Some(c) => (Arc::clone(dict), c),
            None => {
                let mut entries: Vec<String> = dict.entries().to_vec();
                entries.push(sentinel.clone());
                let code = (entries.len() - 1) as u32;
                (Arc::new(Dict::from_entries(entries)?), code)
            }
        };
        let new_codes = codes
            .iter()
            .map(|&c| if c == MISSING_CODE { code } else { c })
            .collect();
        out = out.replace_column(Column::categorical(name.clone(), new_dict, new_codes)?)?;
    }
    Ok(out)
}

/// Shared by every operator whose whole state is "these columns go away".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropColumnsState {
    pub dropped: Vec<String>,
}

pub(super) fn fit_drop_constant(ctx: &FitCtx) -> Result<DropColumnsState> {
    let tables = ctx.scope_tables()?;
    let mut dropped = Vec::new();
    for col in ctx.train.feature_columns() {
        let mut distinct = std::collections::HashSet::new();
        for t in &tables {
            let c = t.column(&col.name)?;
            for row in 0..t.n_rows() {
                match c.kind() {
                    ColumnKind::Numeric => {
                        if let Some(v) = c.num(row) {
                            distinct.insert(format_f64(v));
                        }
                    }
                    ColumnKind::Categorical => {
                        if let Some(s) = c.text(row) {
                            distinct.insert(s.to_string());
                        }
                    }
                }
                if distinct.len() > 1 {
                    break;
                }
            }
            if distinct.len() > 1 {
                break;
            }
        }
        if distinct.len() <= 1 {
            dropped.push(col.name.clone());
        }
    }
    Ok(DropColumnsState { dropped })
}

pub(super) fn transform_drop_columns(s: &DropColumnsState, t: &Table) -> Result<Table> {
    t.drop_columns(&s.dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogTargetState {
    /// False when the step was configured to apply only to flagged targets
    /// and the loaded schema did not flag this one.
    pub applied: bool,
}

pub(super) fn fit_log_target(ctx: &FitCtx, p: &LogTargetParams) -> Result<LogTargetState> {
    let spec = ctx
        .train
        .target_spec
        .ok_or_else(|| Error::MissingTarget("log transform needs a target".into()))?;
    if p.when_flagged && !spec.log_target {
        return Ok(LogTargetState { applied: false });
    }
    if spec.task != Task::Regression {
        return Err(Error::WrongTask {
            expected: "regression".into(),
            got: spec.task.to_string(),
        });
    }
    if spec.transform != TargetTransform::None {
        return Err(Error::Config(
            "target already carries a transform; log1p must come first".into(),
        ));
    }
    let target = ctx
        .train
        .target_column()
        .ok_or_else(|| Error::MissingTarget("log transform needs a target".into()))?;
    for y in ctx.train.target_values()? {
        if y <= -1.0 {
            return Err(Error::NegativeBeyondDomain(target.name.clone()));
        }
    }
    Ok(LogTargetState { applied: true })
}

pub(super) fn transform_log_target(s: &LogTargetState, t: &Table, split: Split) -> Result<Table> {
    if !s.applied || split == Split::Test {
        return Ok(t.clone());
    }
    let name = t
        .target_column()
        .ok_or_else(|| Error::MissingTarget("log transform needs a target".into()))?
        .name
        .clone();
    let y: Vec<f64> = t.target_values()?.iter().map(|v| v.ln_1p()).collect();
    let mut out = t.replace_column(Column::numeric(name, y))?;
    if let Some(spec) = out.target_spec.as_mut() {
        spec.transform = TargetTransform::Log1p;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeState {
    /// Column → (mean, population std).
    pub stats: BTreeMap<String, (f64, f64)>,
    /// Set when standardizing the regression target instead of features.
    pub target: Option<(f64, f64)>,
}

pub(super) fn fit_standardize(ctx: &FitCtx, p: &StandardizeParams) -> Result<StandardizeState> {
    if p.target {
        let spec = ctx
            .train
            .target_spec
            .ok_or_else(|| Error::MissingTarget("standardize needs a target".into()))?;
        if spec.task != Task::Regression {
            return Err(Error::WrongTask {
                expected: "regression".into(),
                got: spec.task.to_string(),
            });
        }
        if ctx.scope == FitScope::TrainPlusTest {
            return Err(Error::ScopeDataUnexpected(
                "the target is never part of a train_plus_test scope".into(),
            ));
        }
        let y = ctx.train.target_values()?;
        let missing = vec![false; y.len()];
        let (mean, std, _) =
            mean_std(&y, &missing).ok_or_else(|| Error::ZeroVariance("target".into()))?;
        if std < 1e-12 {
            return Err(Error::ZeroVariance("target".into()));
        }
        return Ok(StandardizeState {
            stats: BTreeMap::new(),
            target: Some((mean, std)),
        });
    }
    let tables = ctx.scope_tables()?;
    let mut stats = BTreeMap::new();
    for name in &p.cols {
        let mut values = Vec::new();
        let mut missing = Vec::new();
        for t in &tables {
            let (v, m) = numeric_col(t, name)?.numeric_data()?;
            values.extend_from_slice(v);
            missing.extend_from_slice(m);
        }
        let (mean, std, _) =
            mean_std(&values, &missing).ok_or_else(|| Error::AllMissingColumn(name.clone()))?;
        if std < 1e-12 {
            return Err(Error::ZeroVariance(name.clone()));
        }
        stats.insert(name.clone(), (mean, std));
    }
    Ok(StandardizeState {
        stats,
        target: None,
    })
}

pub(super) fn transform_standardize(
    s: &StandardizeState,
    t: &Table,
    split: Split,
) -> Result<Table> {
    if let Some((mean, std)) = s.target {
        if split == Split::Test {
            return Ok(t.clone());
        }
        let name = t
            .target_column()
            .ok_or_else(|| Error::MissingTarget("standardize needs a target".into()))?
            .name
            .clone();
        let y: Vec<f64> = t
            .target_values()?
            .iter()
            .map(|v| (v - mean) / std)
            .collect();
        let mut out = t.replace_column(Column::numeric(name, y))?;
        if let Some(spec) = out.target_spec.as_mut() {
            spec.transform = TargetTransform::Standardize { mean, std };
        }
        return Ok(out);
    }
    let mut out = t.clone();
    for (name, &(mean, std)) in &s.stats {
        let (values, missing) = numeric_col(&out, name)?.numeric_data()?;
        let scaled: Vec<f64> = values
            .iter()
            .zip(missing)
            .map(|(&v, &m)| if m { f64::NAN } else { (v - mean) / std })
            .collect();
        out = out.replace_column(Column::numeric(name.clone(), scaled))?;
    }
    Ok(out)
}

/// Empirical CDF grid: unique sorted values with their midrank quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    pub values: Vec<f64>,
    pub quantiles: Vec<f64>,
}

impl QuantileGrid {
    fn from_values(mut sample: Vec<f64>, col: &str) -> Result<QuantileGrid> {
        sample.sort_by(f64::total_cmp);
        let n = sample.len() as f64;
        let mut values = Vec::new();
        let mut quantiles = Vec::new();
        let mut i = 0usize;
        while i < sample.len() {
            let v = sample[i];
            let mut j = i;
            while j < sample.len() && sample[j] == v {
                j += 1;
            }
            // 1-based midrank of the tie block, shifted by 1/2 so the
            // endpoints sit symmetrically inside (0, 1) and the clip below
            // stays a safety net rather than a cliff at the maximum.
            let midrank = i as f64 + ((j - i) as f64 + 1.0) / 2.0;
            values.push(v);
            quantiles.push((midrank - 0.5) / n);
            i = j;
        }
        if values.len() < 2 {
            return Err(Error::DegenerateColumn(col.to_string()));
        }
        Ok(QuantileGrid { values, quantiles })
    }

    /// Interpolated empirical quantile, clipped away from 0 and 1.
    pub fn quantile(&self, v: f64) -> f64 {
        let q = if v <= self.values[0] {
            self.quantiles[0]
        } else if v >= *self.values.last().unwrap() {
            *self.quantiles.last().unwrap()
        } else {
            let hi = self.values.partition_point(|x| *x < v);
            if self.values[hi] == v {
                self.quantiles[hi]
            } else {
                let lo = hi - 1;
                let w = (v - self.values[lo]) / (self.values[hi] - self.values[lo]);
                self.quantiles[lo] + w * (self.quantiles[hi] - self.quantiles[lo])
            }
        };
        q.clamp(1e-7, 1.0 - 1e-7)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileNormalizeState {
    pub grids: BTreeMap<String, QuantileGrid>,
}

pub(super) fn fit_quantile_normalize(
    ctx: &FitCtx,
    p: &ColsParams,
) -> Result<QuantileNormalizeState> {
    let cols = super::cols_or_all(&p.cols, ctx.train, ColumnKind::Numeric);
    let tables = ctx.scope_tables()?;
    let mut grids = BTreeMap::new();
    for name in &cols {
        let mut sample = Vec::new();
        for t in &tables {
            let (values, missing) = numeric_col(t, name)?.numeric_data()?;
            sample.extend(
                values
                    .iter()
                    .zip(missing)
                    .filter(|(_, &m)| !m)
                    .map(|(&v, _)| v),
            );
        }
        grids.insert(name.clone(), QuantileGrid::from_values(sample, name)?);
    }
    Ok(QuantileNormalizeState { grids })
}

pub(super) fn transform_quantile_normalize(
    s: &QuantileNormalizeState,
    t: &Table,
) -> Result<Table> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = t.clone();
    for (name, grid) in &s.grids {
        let (values, missing) = numeric_col(&out, name)?.numeric_data()?;
        let mapped: Vec<f64> = values
            .iter()
            .zip(missing)
            .map(|(&v, &m)| {
                if m {
                    f64::NAN
                } else {
                    normal.inverse_cdf(grid.quantile(v))
                }
            })
            .collect();
        out = out.replace_column(Column::numeric(name.clone(), mapped))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueSmooth {
    /// Sorted values that occurred exactly once in scope.
    pub unique: Vec<f64>,
    /// Mean of all non-missing scope values.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniqueValueSmoothState {
    pub per_col: BTreeMap<String, UniqueSmooth>,
}

pub(super) fn fit_unique_smooth(ctx: &FitCtx, p: &ColsParams) -> Result<UniqueValueSmoothState> {
    let tables = ctx.scope_tables()?;
    let mut per_col = BTreeMap::new();
    for name in &p.cols {
        let mut sample = Vec::new();
        for t in &tables {
            let (values, missing) = numeric_col(t, name)?.numeric_data()?;
            sample.extend(
                values
                    .iter()
                    .zip(missing)
                    .filter(|(_, &m)| !m)
                    .map(|(&v, _)| v),
            );
        }
        if sample.is_empty() {
            return Err(Error::AllMissingColumn(name.clone()));
        }
        let mean = sample.iter().sum::<f64>() / sample.len() as f64;
        sample.sort_by(f64::total_cmp);
        let mut unique = Vec::new();
        let mut i = 0usize;
        while i < sample.len() {
            let mut j = i;
            while j < sample.len() && sample[j] == sample[i] {
                j += 1;
            }
            if j - i == 1 {
                unique.push(sample[i]);
            }
            i = j;
        }
        per_col.insert(name.clone(), UniqueSmooth { unique, mean });
    }
    Ok(UniqueValueSmoothState { per_col })
}

pub(super) fn transform_unique_smooth(s: &UniqueValueSmoothState, t: &Table) -> Result<Table> {
    let mut out = t.clone();
    for (name, smooth) in &s.per_col {
        let (values, missing) = numeric_col(&out, name)?.numeric_data()?;
        let mapped: Vec<f64> = values
            .iter()
            .zip(missing)
            .map(|(&v, &m)| {
                if m {
                    f64::NAN
                } else if smooth.unique.binary_search_by(|x| x.total_cmp(&v)).is_ok() {
                    smooth.mean
                } else {
                    v
                }
            })
            .collect();
        out = out.replace_column(Column::numeric(name.clone(), mapped))?;
    }
    Ok(out)
}
