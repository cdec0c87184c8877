//! Fold-aware operators. Both encode information that would leak if
//! estimated on a row's own labels, so each train row only ever sees state
//! fitted with its fold held out; test rows get the all-train estimate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{self, FeatureMatrix, FittedLearner, LearnerConfig, LearnerKind};
use crate::table::{Column, Table, Task};

use super::{categorical_col, numeric_col, FitCtx, FitScope, OofModelParams, Split,
    TargetEncodeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeCol {
    pub source: String,
    pub outputs: Vec<String>,
    /// Per fold: category → encoded value per output class, estimated on
    /// the rows *outside* that fold.
    pub fold_maps: Vec<BTreeMap<String, Vec<f64>>>,
    pub fold_priors: Vec<Vec<f64>>,
    pub global_map: BTreeMap<String, Vec<f64>>,
    pub global_prior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncodeState {
    pub smoothing: f64,
    /// Fold of each train row at fit time, for replaying train transforms.
    pub fold_of: Vec<u32>,
    pub cols: Vec<TeCol>,
}

/// Per-class target indicators: regression and binary use the target as-is,
/// multiclass gets one 0/1 column per class.
fn target_rows(task: Task, y: &[f64]) -> Vec<Vec<f64>> {
    match task {
        Task::Regression | Task::Binary => y.iter().map(|&v| vec![v]).collect(),
        Task::Multiclass(k) => y
            .iter()
            .map(|&v| (0..k).map(|c| f64::from(v as usize == c)).collect())
            .collect(),
    }
}

pub(super) fn fit_target_encode(
    ctx: &FitCtx,
    p: &TargetEncodeParams,
) -> Result<TargetEncodeState> {
    let folds = ctx.folds()?;
    let n = ctx.train.n_rows();
    if folds.fold_of.len() != n {
        return Err(Error::RowCountMismatch {
            expected: n,
            got: folds.fold_of.len(),
        });
    }
    let spec = ctx
        .train
        .target_spec
        .ok_or_else(|| Error::MissingTarget("target encoding needs a target".into()))?;
    let y = target_rows(spec.task, &ctx.train.target_values()?);
    let n_out = y[0].len();
    let n_folds = folds.n_folds;
    let m = p.smoothing;

    // Global and per-fold target totals over all rows (the priors).
    let mut total = vec![0.0; n_out];
    let mut fold_total = vec![vec![0.0; n_out]; n_folds];
    let mut fold_rows = vec![0usize; n_folds];
    for (row, yr) in y.iter().enumerate() {
        let f = folds.fold_of[row] as usize;
        fold_rows[f] += 1;
        for (c, v) in yr.iter().enumerate() {
            total[c] += v;
            fold_total[f][c] += v;
        }
    }
    let global_prior: Vec<f64> = total.iter().map(|s| s / n as f64).collect();
    let fold_priors: Vec<Vec<f64>> = (0..n_folds)
        .map(|f| {
            let out_rows = (n - fold_rows[f]) as f64;
            (0..n_out)
                .map(|c| (total[c] - fold_total[f][c]) / out_rows)
                .collect()
        })
        .collect();

    struct Acc {
        sum: Vec<f64>,
        cnt: u64,
    }
    let mut cols = Vec::new();
    for name in &p.cols {
        let c = categorical_col(ctx.train, name)?;
        let mut global: BTreeMap<String, Acc> = BTreeMap::new();
        let mut infold: Vec<BTreeMap<String, Acc>> = (0..n_folds).map(|_| BTreeMap::new()).collect();
        for (row, yr) in y.iter().enumerate() {
            let Some(text) = c.text(row) else { continue };
            let f = folds.fold_of[row] as usize;
            for acc in [
                global.entry(text.to_string()).or_insert(Acc {
                    sum: vec![0.0; n_out],
                    cnt: 0,
                }),
                infold[f].entry(text.to_string()).or_insert(Acc {
                    sum: vec![0.0; n_out],
                    cnt: 0,
                }),
            ] {
                acc.cnt += 1;
                for (s, v) in acc.sum.iter_mut().zip(yr) {
                    *s += v;
                }
            }
        }
        let encode = |sum: &[f64], cnt: u64, prior: &[f64]| -> Vec<f64> {
            if cnt == 0 && m == 0.0 {
                return prior.to_vec();
            }
            sum.iter()
                .zip(prior)
                .map(|(s, p)| (s + m * p) / (cnt as f64 + m))
                .collect()
        };
        let fold_maps: Vec<BTreeMap<String, Vec<f64>>> = (0..n_folds)
            .map(|f| {
                global
                    .iter()
                    .map(|(cat, g)| {
                        let (in_sum, in_cnt) = infold[f]
                            .get(cat)
                            .map_or((vec![0.0; n_out], 0), |a| (a.sum.clone(), a.cnt));
                        let out_sum: Vec<f64> =
                            g.sum.iter().zip(&in_sum).map(|(a, b)| a - b).collect();
                        (cat.clone(), encode(&out_sum, g.cnt - in_cnt, &fold_priors[f]))
                    })
                    .collect()
            })
            .collect();
        let global_map = global
            .iter()
            .map(|(cat, g)| (cat.clone(), encode(&g.sum, g.cnt, &global_prior)))
            .collect();
        let outputs = if n_out == 1 {
            vec![ctx.name(&format!("te.{name}"))]
        } else {
            (0..n_out)
                .map(|c| ctx.name(&format!("te.{name}.class_{c}")))
                .collect()
        };
        cols.push(TeCol {
            source: name.clone(),
            outputs,
            fold_maps,
            fold_priors: fold_priors.clone(),
            global_map,
            global_prior: global_prior.clone(),
        });
    }
    Ok(TargetEncodeState {
        smoothing: m,
        fold_of: folds.fold_of.clone(),
        cols,
    })
}

pub(super) fn transform_target_encode(
    s: &TargetEncodeState,
    t: &Table,
    split: Split,
) -> Result<Table> {
    if split == Split::Train && s.fold_of.len() != t.n_rows() {
        return Err(Error::RowCountMismatch {
            expected: s.fold_of.len(),
            got: t.n_rows(),
        });
    }
    let mut new_cols = Vec::new();
    for tc in &s.cols {
        let c = categorical_col(t, &tc.source)?;
        let n_out = tc.outputs.len();
        let mut values: Vec<Vec<f64>> = vec![Vec::with_capacity(t.n_rows()); n_out];
        for row in 0..t.n_rows() {
            let (map, prior) = match split {
                Split::Train => {
                    let f = s.fold_of[row] as usize;
                    (&tc.fold_maps[f], &tc.fold_priors[f])
                }
                Split::Test => (&tc.global_map, &tc.global_prior),
            };
            // Missing and unseen categories fall back to the prior.
            let enc = c.text(row).and_then(|text| map.get(text)).unwrap_or(prior);
            for (col, v) in values.iter_mut().zip(enc) {
                col.push(*v);
            }
        }
        for (name, vals) in tc.outputs.iter().zip(values) {
            new_cols.push(Column::numeric(name.clone(), vals));
        }
    }
    t.append_columns(new_cols)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OofModelState {
    pub inputs: Vec<String>,
    pub output_col: String,
    pub fold_of: Vec<u32>,
    /// One model per fold, trained with that fold held out.
    pub models: Vec<FittedLearner>,
    /// Linear models need complete inputs; missing becomes 0 at predict.
    pub fill_zero: bool,
    pub output: String,
}

fn input_matrix(t: &Table, inputs: &[String]) -> Result<FeatureMatrix> {
    let mut columns = Vec::with_capacity(inputs.len());
    for name in inputs {
        columns.push(numeric_col(t, name)?.numeric_data()?.0.to_vec());
    }
    Ok(FeatureMatrix {
        names: inputs.to_vec(),
        columns,
        n_rows: t.n_rows(),
    })
}

pub(super) fn fit_oof_model(ctx: &FitCtx, p: &OofModelParams) -> Result<OofModelState> {
    let folds = ctx.folds()?;
    let n = ctx.train.n_rows();
    if folds.fold_of.len() != n {
        return Err(Error::RowCountMismatch {
            expected: n,
            got: folds.fold_of.len(),
        });
    }
    let mut cfg = p
        .learner
        .clone()
        .unwrap_or_else(|| LearnerConfig::new(LearnerKind::Gbdt));
    if cfg.learner == LearnerKind::External {
        return Err(Error::Config(
            "external learners cannot back out-of-fold feature models".into(),
        ));
    }
    // The op has no held-out set of its own: no early stopping, and a
    // modest default round count instead of the harness default.
    cfg.patience = Some(0);
    if cfg.learner == LearnerKind::Gbdt && !cfg.hyperparameters.contains_key("n_estimators") {
        cfg.hyperparameters.insert(
            "n_estimators".into(),
            crate::hpo::ParamValue::Int(200),
        );
    }
    let fill_zero = cfg.learner == LearnerKind::Linear;

    let x_train = input_matrix(ctx.train, &p.input_cols)?;
    let (out_values, out_missing) = numeric_col(ctx.train, &p.output_col)?.numeric_data()?;
    let tta_test = match ctx.scope {
        FitScope::TrainPlusTest => Some(ctx.scope_tables()?[1]),
        FitScope::TrainOnly => None,
    };
    let test_parts = tta_test
        .map(|test| -> Result<(FeatureMatrix, Vec<usize>, Vec<f64>)> {
            let x = input_matrix(test, &p.input_cols)?;
            let (v, miss) = numeric_col(test, &p.output_col)?.numeric_data()?;
            let rows: Vec<usize> = (0..test.n_rows()).filter(|&r| !miss[r]).collect();
            let y = rows.iter().map(|&r| v[r]).collect();
            Ok((x.take_rows(&rows), rows, y))
        })
        .transpose()?;

    let mut models = Vec::with_capacity(folds.n_folds);
    for f in 0..folds.n_folds {
        let rows: Vec<usize> = folds
            .out_of_fold_rows(f)
            .into_iter()
            .filter(|&r| !out_missing[r])
            .collect();
        let mut x = x_train.take_rows(&rows);
        let mut y: Vec<f64> = rows.iter().map(|&r| out_values[r]).collect();
        if let Some((tx, _, ty)) = &test_parts {
            // Test rows sit outside every fold, so with test in scope they
            // join every fold model's training set.
            for (col, extra) in x.columns.iter_mut().zip(&tx.columns) {
                col.extend_from_slice(extra);
            }
            x.n_rows += tx.n_rows;
            y.extend_from_slice(ty);
        }
        if y.is_empty() {
            return Err(Error::AllMissingColumn(p.output_col.clone()));
        }
        if fill_zero {
            x = x.fill_missing(0.0);
        }
        let mut cfg_f = cfg.clone();
        cfg_f.seed = ctx.seed ^ f as u64;
        models.push(learners::fit(&cfg_f, Task::Regression, &x, &y, None)?);
    }
    Ok(OofModelState {
        inputs: p.input_cols.clone(),
        output_col: p.output_col.clone(),
        fold_of: folds.fold_of.clone(),
        models,
        fill_zero,
        output: ctx.name(&format!("oof.{}", p.output_col)),
    })
}

pub(super) fn transform_oof_model(s: &OofModelState, t: &Table, split: Split) -> Result<Table> {
    if split == Split::Train && s.fold_of.len() != t.n_rows() {
        return Err(Error::RowCountMismatch {
            expected: s.fold_of.len(),
            got: t.n_rows(),
        });
    }
    let mut x = input_matrix(t, &s.inputs)?;
    if s.fill_zero {
        x = x.fill_missing(0.0);
    }
    let per_model: Vec<Vec<f64>> = s
        .models
        .iter()
        .map(|m| Ok(learners::predict(m, &x)?.col0()))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = (0..t.n_rows())
        .map(|row| match split {
            Split::Train => per_model[s.fold_of[row] as usize][row],
            Split::Test => {
                per_model.iter().map(|p| p[row]).sum::<f64>() / per_model.len() as f64
            }
        })
        .collect();
    t.append_columns(vec![Column::numeric(s.output.clone(), values)])
}
