//! Evaluation metrics, rank utilities, and prediction containers.
//!
//! All classification metrics are rank- or probability-based and operate on
//! the transformed target space the learners see; regression error metrics
//! therefore match the space the model was trained in (callers report the
//! raw space separately when a target transform is active).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

pub const METRIC_NAMES: [&str; 6] = ["auc", "logloss", "rmse", "rmsle", "r2", "gini"];

pub fn metric_direction(name: &str) -> Result<Direction> {
    match name {
        "auc" | "gini" | "r2" => Ok(Direction::HigherBetter),
        "logloss" | "rmse" | "rmsle" => Ok(Direction::LowerBetter),
        other => Err(Error::UnknownMetric(other.to_string())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub name: &'static str,
    pub value: f64,
    pub direction: Direction,
}

// Manual impl because `name` is a static interned string: deserialization
// looks the incoming text up in METRIC_NAMES instead of borrowing it.
impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            name: String,
            value: f64,
            direction: Direction,
        }
        let raw = Raw::deserialize(d)?;
        let name = METRIC_NAMES
            .iter()
            .find(|&&m| m == raw.name)
            .copied()
            .ok_or_else(|| serde::de::Error::custom(format!("unknown metric: {}", raw.name)))?;
        Ok(MetricValue {
            name,
            value: raw.value,
            direction: raw.direction,
        })
    }
}

impl MetricValue {
    /// Minimize-oriented view for optimizers: higher-better values negate.
    pub fn objective(&self) -> f64 {
        match self.direction {
            Direction::LowerBetter => self.value,
            Direction::HigherBetter => -self.value,
        }
    }
}

/// Row-major prediction matrix: one column for regression/binary (positive
/// class probability), k columns for multiclass.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    values: Vec<f64>,
    n_cols: usize,
}

impl Predictions {
    pub fn single(values: Vec<f64>) -> Predictions {
        Predictions { values, n_cols: 1 }
    }

    pub fn new(values: Vec<f64>, n_cols: usize) -> Result<Predictions> {
        if n_cols == 0 || !values.len().is_multiple_of(n_cols) {
            return Err(Error::ShapeMismatch);
        }
        Ok(Predictions { values, n_cols })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_cols
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// First column (the only one for regression/binary).
    pub fn col0(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.row(r)[0]).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Predictions {
        Predictions {
            values: self.values.iter().map(|&v| f(v)).collect(),
            n_cols: self.n_cols,
        }
    }

    /// Elementwise mean across folds; shapes must agree exactly.
    pub fn mean(folds: &[Predictions]) -> Result<Predictions> {
        let first = folds.first().ok_or(Error::ShapeMismatch)?;
        if folds
            .iter()
            .any(|p| p.n_cols != first.n_cols || p.values.len() != first.values.len())
        {
            return Err(Error::ShapeMismatch);
        }
        let mut values = vec![0.0; first.values.len()];
        for p in folds {
            for (acc, v) in values.iter_mut().zip(&p.values) {
                *acc += v;
            }
        }
        let k = folds.len() as f64;
        values.iter_mut().for_each(|v| *v /= k);
        Ok(Predictions {
            values,
            n_cols: first.n_cols,
        })
    }

    /// Renormalizes each row to sum to 1 (multiclass probability repair
    /// after averaging). Rows summing to 0 become uniform.
    pub fn renormalize_rows(&self) -> Predictions {
        let mut values = self.values.clone();
        for r in 0..self.n_rows() {
            let row = &mut values[r * self.n_cols..(r + 1) * self.n_cols];
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            } else {
                row.iter_mut().for_each(|v| *v = 1.0 / self.n_cols as f64);
            }
        }
        Predictions {
            values,
            n_cols: self.n_cols,
        }
    }
}

/// 1-based average ranks; tied values share the mean of their rank range.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let order = crate::util::stable_argsort(values);
    let n = values.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let r = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Rank-based ROC AUC: (sum of positive midranks − n₊(n₊+1)/2) / (n₊·n₋).
/// Tied scores contribute 1/2 per pair, matching the pairwise definition.
pub fn auc(y_true: &[f64], scores: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), scores.len())?;
    check_finite(scores)?;
    let n_pos = y_true.iter().filter(|&&y| y == 1.0).count();
    let n_neg = y_true.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("auc".into()));
    }
    let ranks = midranks(scores);
    let pos_rank_sum: f64 = y_true
        .iter()
        .zip(&ranks)
        .filter(|(&y, _)| y == 1.0)
        .map(|(_, &r)| r)
        .sum();
    let np = n_pos as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Binary cross-entropy with probabilities clipped to [1e−15, 1−1e−15].
pub fn logloss_binary(y_true: &[f64], probs: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), probs.len())?;
    check_finite(probs)?;
    let n = y_true.len() as f64;
    let s: f64 = y_true
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            if y == 1.0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(s / n)
}

/// Multiclass cross-entropy over a row-stochastic probability matrix.
pub fn logloss_multi(y_true: &[f64], probs: &Predictions) -> Result<f64> {
    check_lengths(y_true.len(), probs.n_rows())?;
    check_finite(probs.values())?;
    let n = y_true.len() as f64;
    let mut s = 0.0;
    for (r, &y) in y_true.iter().enumerate() {
        let c = y as usize;
        if y.fract() != 0.0 || c >= probs.n_cols() {
            return Err(Error::NonFinite);
        }
        s += -probs.row(r)[c].clamp(PROB_CLIP, 1.0 - PROB_CLIP).ln();
    }
    Ok(s / n)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    check_finite(y_pred)?;
    let n = y_true.len() as f64;
    let ss: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(&y, &p)| (y - p) * (y - p))
        .sum();
    Ok((ss / n).sqrt())
}

pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    check_finite(y_pred)?;
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|&y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::DegenerateConstantVector);
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(&y, &p)| (y - p) * (y - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson correlation of midranks.
pub fn spearman_rank_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let ra = midranks(a);
    let rb = midranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::DegenerateConstantVector);
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Dispatch by metric name. `y_true` holds raw labels (class codes for
/// classification) and `preds` probabilities or regression values; `rmsle`
/// is the rmse formula — the engine evaluates it in log1p target space.
pub fn compute_metric(name: &str, y_true: &[f64], preds: &Predictions) -> Result<MetricValue> {
    check_lengths(y_true.len(), preds.n_rows())?;
    let direction = metric_direction(name)?;
    let value = match name {
        "auc" => auc(y_true, &preds.col0())?,
        "gini" => 2.0 * auc(y_true, &preds.col0())? - 1.0,
        "logloss" => {
            if preds.n_cols() > 1 {
                logloss_multi(y_true, preds)?
            } else {
                logloss_binary(y_true, &preds.col0())?
            }
        }
        "rmse" | "rmsle" => rmse(y_true, &preds.col0())?,
        "r2" => r2(y_true, &preds.col0())?,
        _ => unreachable!("direction lookup already validated the name"),
    };
    let name: &'static str = METRIC_NAMES
        .iter()
        .find(|&&m| m == name)
        .copied()
        .expect("validated");
    Ok(MetricValue {
        name,
        value,
        direction,
    })
}
