//! Built-in baseline learners (regularized linear models and histogram
//! gradient-boosted trees) plus a process adapter for external learners.

pub mod external;
pub mod gbdt;
pub mod linear;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpo::ParamValue;
use crate::metrics::Predictions;
use crate::table::{ColumnKind, Table, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Linear,
    Gbdt,
    External,
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LearnerKind::Linear => write!(f, "linear"),
            LearnerKind::Gbdt => write!(f, "gbdt"),
            LearnerKind::External => write!(f, "external"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub learner: LearnerKind,
    /// Command line for external learners, split on whitespace.
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub hyperparameters: BTreeMap<String, ParamValue>,
    /// Early-stopping rounds; learners without early stopping ignore it.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Validation metric; defaults to the dataset metric at run time.
    #[serde(default)]
    pub metric: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerConfig {
    pub fn new(learner: LearnerKind) -> LearnerConfig {
        LearnerConfig {
            learner,
            command: None,
            hyperparameters: BTreeMap::new(),
            patience: None,
            metric: None,
            seed: 0,
        }
    }

    /// Hyperparameter names the built-in learners accept.
    pub fn known_params(kind: LearnerKind) -> &'static [&'static str] {
        match kind {
            LearnerKind::Linear => &["alpha"],
            LearnerKind::Gbdt => &[
                "n_estimators",
                "patience",
                "learning_rate",
                "max_depth",
                "colsample_bytree",
                "subsample",
                "min_child_weight",
                "reg_alpha",
                "reg_lambda",
            ],
            LearnerKind::External => &[],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learner == LearnerKind::External {
            if self.command.is_none() {
                return Err(Error::Config("external learner needs a command".into()));
            }
            return Ok(()); // external hyperparameters pass through opaquely
        }
        let known = Self::known_params(self.learner);
        for name in self.hyperparameters.keys() {
            if !known.contains(&name.as_str()) {
                return Err(Error::UnknownHyperparameter(name.clone()));
            }
        }
        Ok(())
    }

    pub fn with_params(mut self, params: BTreeMap<String, ParamValue>) -> Self {
        self.hyperparameters.extend(params);
        self
    }

    pub fn f64_param(&self, name: &str, default: f64) -> Result<f64> {
        match self.hyperparameters.get(name) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::UnknownHyperparameter(format!("{name}: not numeric"))),
        }
    }

    pub fn usize_param(&self, name: &str, default: usize) -> Result<usize> {
        match self.hyperparameters.get(name) {
            None => Ok(default),
            Some(v) => v
                .as_i64()
                .filter(|&i| i >= 0)
                .map(|i| i as usize)
                .ok_or_else(|| {
                    Error::UnknownHyperparameter(format!("{name}: not a non-negative integer"))
                }),
        }
    }
}

/// Dense column-major feature view of a table's numeric feature columns.
/// Missing values stay NaN; each learner decides how to treat them.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    /// One Vec per feature, each of length n_rows.
    pub columns: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl FeatureMatrix {
    /// Extracts all Feature-role columns; categoricals must have been
    /// encoded upstream.
    pub fn from_table(t: &Table) -> Result<FeatureMatrix> {
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for c in t.feature_columns() {
            if c.kind() == ColumnKind::Categorical {
                return Err(Error::KindMismatch(c.name.clone()));
            }
            let (values, _) = c.numeric_data()?;
            names.push(c.name.clone());
            columns.push(values.to_vec());
        }
        Ok(FeatureMatrix {
            names,
            columns,
            n_rows: t.n_rows(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    pub fn take_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
            n_rows: idx.len(),
        }
    }

    pub fn has_missing(&self) -> bool {
        self.columns.iter().any(|c| c.iter().any(|v| v.is_nan()))
    }

    /// Copy with NaN replaced by `fill`.
    pub fn fill_missing(&self, fill: f64) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| c.iter().map(|&v| if v.is_nan() { fill } else { v }).collect())
                .collect(),
            n_rows: self.n_rows,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FittedLearner {
    Linear(linear::LinearModel),
    Gbdt(gbdt::GbdtModel),
}

impl FittedLearner {
    pub fn n_features(&self) -> usize {
        match self {
            FittedLearner::Linear(m) => m.n_features,
            FittedLearner::Gbdt(m) => m.n_features,
        }
    }
}

/// Trains the configured built-in learner. `valid` feeds GBDT early
/// stopping; the linear model ignores it.
pub fn fit(
    cfg: &LearnerConfig,
    task: Task,
    x: &FeatureMatrix,
    y: &[f64],
    valid: Option<(&FeatureMatrix, &[f64])>,
) -> Result<FittedLearner> {
    cfg.validate()?;
    if y.len() != x.n_rows {
        return Err(Error::LengthMismatch {
            expected: x.n_rows,
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    match cfg.learner {
        LearnerKind::Linear => Ok(FittedLearner::Linear(linear::fit(cfg, task, x, y)?)),
        LearnerKind::Gbdt => Ok(FittedLearner::Gbdt(gbdt::fit(cfg, task, x, y, valid)?)),
        LearnerKind::External => Err(Error::Config(
            "external learners run through the fold protocol, not fit()".into(),
        )),
    }
}

/// Predicts with a fitted learner: probabilities for classification
/// (multiclass rows sum to 1), raw values for regression.
pub fn predict(m: &FittedLearner, x: &FeatureMatrix) -> Result<Predictions> {
    if x.n_features() != m.n_features() {
        return Err(Error::FeatureCountMismatch {
            expected: m.n_features(),
            got: x.n_features(),
        });
    }
    match m {
        FittedLearner::Linear(m) => linear::predict(m, x),
        FittedLearner::Gbdt(m) => gbdt::predict(m, x),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Column;

    #[test]
    fn unknown_hyperparameter_rejected() {
        let mut cfg = LearnerConfig::new(LearnerKind::Gbdt);
        cfg.hyperparameters
            .insert("gamma".into(), ParamValue::Float(1.0));
        assert!(matches!(
            cfg.validate(),
            Err(Error::UnknownHyperparameter(n)) if n == "gamma"
        ));
    }

    #[test]
    fn matrix_rejects_categorical_features() {
        let t = Table::new(vec![Column::categorical_from_texts(
            "c",
            &[Some("a"), Some("b")],
        )])
        .unwrap();
        assert!(matches!(
            FeatureMatrix::from_table(&t),
            Err(Error::KindMismatch(_))
        ));
    }

    #[test]
    fn predict_feature_count_checked() {
        let x = FeatureMatrix {
            names: vec!["a".into()],
            columns: vec![vec![0.0, 1.0, 2.0, 3.0]],
            n_rows: 4,
        };
        let y = vec![0.0, 1.0, 2.0, 3.0];
        let m = fit(
            &LearnerConfig::new(LearnerKind::Linear),
            Task::Regression,
            &x,
            &y,
            None,
        )
        .unwrap();
        let wide = FeatureMatrix {
            names: vec!["a".into(), "b".into()],
            columns: vec![vec![0.0], vec![0.0]],
            n_rows: 1,
        };
        assert!(matches!(
            predict(&m, &wide),
            Err(Error::FeatureCountMismatch { expected: 1, got: 2 })
        ));
    }
}
