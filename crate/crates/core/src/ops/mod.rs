//! Feature-engineering operator catalog.
//!
//! Every operator is a pure `fit` / `transform` pair: `fit` estimates a
//! serializable state from the rows its declared scope permits, and
//! `transform` applies that state deterministically to any table with a
//! compatible schema. Train and test are always transformed with the same
//! state, which is what keeps engineered features leakage-free.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::FoldAssignment;
use crate::table::{Column, ColumnKind, Role, Table};

mod basic;
mod combine;
mod encode;
mod oof;
mod project;
mod select;

pub use basic::{
    DropColumnsState, ImputeMeanState, LogTargetState, MissingAsCategoryState, QuantileGrid,
    QuantileNormalizeState, StandardizeState, UniqueSmooth, UniqueValueSmoothState,
};
pub use combine::{
    ArithCombineState, ArithTerm, GroupInfo, GroupbyAggState, LogicalAndState, RowStat,
    RowStatsState,
};
pub use encode::{
    CatInteractionState, FreqCol, FrequencyEncodeState, NumToCatCol, NumToCatState, OccCol,
    OccCounts, OneHotCol, OneHotState, OrdinalCol, OrdinalEncodeState, ValueOccurrenceState,
    OCCURRENCE_CATEGORIES, OCCURRENCE_CATEGORY_TTA,
};
pub use oof::{OofModelState, TargetEncodeState, TeCol};
pub use project::{KmeansState, PcaState};
pub use select::FeatureSelectState;

/// Row set an operator's state may be estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    #[default]
    TrainOnly,
    TrainPlusTest,
}

/// Which side of the split a table being transformed belongs to. Operators
/// built around fold structure (out-of-fold encodings, occurrence labels)
/// treat the two sides differently; everything else ignores this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Everything a `fit` call may look at.
///
/// `test` is populated whenever test features exist in the run, but
/// operators must only reach it through [`FitCtx::scope_tables`], which
/// withholds it under `TrainOnly`. The leakage auditor relies on that
/// discipline: it hands perturbed test tables to every step and checks that
/// `TrainOnly` states stay bit-identical.
pub struct FitCtx<'a> {
    pub train: &'a Table,
    pub test: Option<&'a Table>,
    pub scope: FitScope,
    pub folds: Option<&'a FoldAssignment>,
    pub seed: u64,
    /// Prefix (e.g. `"s3."`) applied to every column a step creates, so two
    /// steps can never collide on an output name.
    pub prefix: String,
}

impl<'a> FitCtx<'a> {
    /// The tables the declared scope allows the fit to read.
    pub fn scope_tables(&self) -> Result<Vec<&'a Table>> {
        match self.scope {
            FitScope::TrainOnly => Ok(vec![self.train]),
            FitScope::TrainPlusTest => {
                let test = self.test.ok_or_else(|| {
                    Error::ScopeDataMissing(
                        "scope train_plus_test requires test features".into(),
                    )
                })?;
                Ok(vec![self.train, test])
            }
        }
    }

    pub fn scope_rows(&self) -> Result<usize> {
        Ok(self.scope_tables()?.iter().map(|t| t.n_rows()).sum())
    }

    pub fn folds(&self) -> Result<&'a FoldAssignment> {
        match self.folds {
            Some(f) if f.n_folds >= 2 => Ok(f),
            _ => Err(Error::MissingFolds),
        }
    }

    /// Output column name for this step.
    pub fn name(&self, suffix: &str) -> String {
        format!("{}{}", self.prefix, suffix)
    }
}

/// Looks up a feature column by name; target/id columns are not valid
/// operator inputs.
/// Resolves an operator's column list: explicit names pass through, an
/// empty list expands to every feature column of `kind` in training-schema
/// order (the dataset-agnostic mode of the preprocessing operators).
pub(crate) fn cols_or_all(cols: &[String], train: &Table, kind: ColumnKind) -> Vec<String> {
    if !cols.is_empty() {
        return cols.to_vec();
    }
    train
        .feature_columns()
        .filter(|c| c.kind() == kind)
        .map(|c| c.name.clone())
        .collect()
}

pub(crate) fn feature_col<'t>(t: &'t Table, name: &str) -> Result<&'t Column> {
    let c = t.column(name)?;
    if c.role != Role::Feature {
        return Err(Error::KindMismatch(format!(
            "column `{name}` has role {:?}, operators only act on features",
            c.role
        )));
    }
    Ok(c)
}

pub(crate) fn numeric_col<'t>(t: &'t Table, name: &str) -> Result<&'t Column> {
    let c = feature_col(t, name)?;
    if c.kind() != ColumnKind::Numeric {
        return Err(Error::KindMismatch(format!(
            "column `{name}` is categorical, expected numeric"
        )));
    }
    Ok(c)
}

pub(crate) fn categorical_col<'t>(t: &'t Table, name: &str) -> Result<&'t Column> {
    let c = feature_col(t, name)?;
    if c.kind() != ColumnKind::Categorical {
        return Err(Error::KindMismatch(format!(
            "column `{name}` is numeric, expected categorical"
        )));
    }
    Ok(c)
}

/// Rejects duplicate names in an operator's column selection.
pub(crate) fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::DuplicateSelection(n.clone()));
        }
    }
    Ok(())
}

/// Population mean and standard deviation of the non-missing values;
/// `None` when every value is missing.
pub(crate) fn mean_std(values: &[f64], missing: &[bool]) -> Option<(f64, f64, usize)> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for (v, &m) in values.iter().zip(missing) {
        if !m {

            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let mean = sum / n as f64;
    let mut ss = 0.0;
    for (v, &m) in values.iter().zip(missing) {
        if !m {
            ss += (v - mean) * (v - mean);
        }
    }
    Some((mean, (ss / n as f64).sqrt(), n))
}

/// Midrank-based percentile of `v` within a sorted reference sample,
/// `(midrank − 1) / (n − 1)` clamped to [0, 1]; 0.5 for singletons.
pub(crate) fn percentile_in(sorted: &[f64], v: f64) -> f64 {
    let n = sorted.len();
    if n <= 1 {
        return 0.5;
    }
    let lo = sorted.partition_point(|x| *x < v);
    let hi = sorted.partition_point(|x| *x <= v);
    let eq = hi - lo;
    let midrank = if eq > 0 {
        lo as f64 + (eq as f64 + 1.0) / 2.0
    } else {
        lo as f64 + 0.5
    };
    ((midrank - 1.0) / (n as f64 - 1.0)).clamp(0.0, 1.0)
}

fn default_smoothing() -> f64 {
    10.0
}

fn default_max_cardinality() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColsParams {
    /// Explicit column list. The dataset-agnostic preprocessing operators
    /// (mean imputation, missing-as-category, ordinal encoding, quantile
    /// normalization) accept an empty/omitted list as "every feature column
    /// of the applicable kind", resolved against the training schema at fit
    /// time; every other operator requires explicit names.
    #[serde(default)]
    pub cols: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct LogTargetParams {
    /// When set, the step silently no-ops unless the loaded schema flagged
    /// the target as heavy-tailed. Lets one shared pipeline document serve
    /// datasets with and without the flag.
    #[serde(default)]
    pub when_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyEncodeParams {
    pub cols: Vec<String>,
    #[serde(default)]
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEncodeParams {
    pub cols: Vec<String>,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneHotParams {
    pub cols: Vec<String>,
    #[serde(default = "default_max_cardinality")]
    pub max_cardinality: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatInteractionParams {
    pub cols: Vec<String>,
    #[serde(default)]
    pub hashed: bool,
    #[serde(default)]
    pub n_buckets: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArithCombineParams {
    pub pairs: Vec<[String; 2]>,
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupbyAggParams {
    pub group_col: String,
    pub value_col: String,
    pub stats: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowStatsParams {
    pub cols: Vec<String>,
    pub stat: String,
    /// Required for `value_count`, rejected otherwise.
    #[serde(default)]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumToCatParams {
    pub cols: Vec<String>,
    pub decimals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StandardizeParams {
    #[serde(default)]
    pub cols: Vec<String>,
    /// Standardize the regression target instead of feature columns.
    #[serde(default)]
    pub target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropCorrelatedParams {
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropLowSupportParams {
    pub min_pos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSelectParams {
    pub keep: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaParams {
    pub cols: Vec<String>,
    pub n_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmeansParams {
    pub cols: Vec<String>,
    pub k: usize,
    pub emit: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OofModelParams {
    pub input_cols: Vec<String>,
    pub output_col: String,
    /// Built-in learner settings; defaults to a small GBDT.
    #[serde(default)]
    pub learner: Option<crate::learners::LearnerConfig>,
}

/// A parsed, validated operator with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum OpSpec {
    ImputeMean(ColsParams),
    MissingAsCategory(ColsParams),
    DropConstant,
    LogTarget(LogTargetParams),
    FrequencyEncode(FrequencyEncodeParams),
    TargetEncodeOof(TargetEncodeParams),
    OneHot(OneHotParams),
    OrdinalEncode(ColsParams),
    CatInteraction(CatInteractionParams),
    ArithCombine(ArithCombineParams),
    GroupbyAgg(GroupbyAggParams),
    RowStats(RowStatsParams),
    LogicalAnd(ColsParams),
    NumToCat(NumToCatParams),
    QuantileNormalize(ColsParams),
    Standardize(StandardizeParams),
    DropCorrelated(DropCorrelatedParams),
    DropLowTargetSupport(DropLowSupportParams),
    FeatureSelectList(FeatureSelectParams),
    PcaFeatures(PcaParams),
    KmeansFeatures(KmeansParams),
    ValueOccurrence(ColsParams),
    UniqueValueSmooth(ColsParams),
    OofModelFeature(OofModelParams),
    /// Deliberately broken frequency encoder that reads test rows no matter
    /// what scope it declared. Exists so the leakage auditor has a true
    /// positive to catch; never use it in a real pipeline.
    DebugLeakyFreq(ColsParams),
}

pub const OP_NAMES: &[&str] = &[
    "op_impute_mean",
    "op_missing_as_category",
    "op_drop_constant",
    "op_log_target",
    "op_frequency_encode",
    "op_target_encode_oof",
    "op_one_hot",
    "op_ordinal_encode",
    "op_cat_interaction",
    "op_arith_combine",
    "op_groupby_agg",
    "op_row_stats",
    "op_logical_and",
    "op_num_to_cat",
    "op_quantile_normalize",
    "op_standardize",
    "op_drop_correlated",
    "op_drop_low_target_support",
    "op_feature_select_list",
    "op_pca_features",
    "op_kmeans_features",
    "op_value_occurrence",
    "op_unique_value_smooth",
    "op_oof_model_feature",
    "op_debug_leaky_freq",
];

fn params<T: DeserializeOwned>(value: serde_json::Value) -> Result<T> {
    let value = if value.is_null() {
        serde_json::Value::Object(serde_json::Map::new())
    } else {
        value
    };
    serde_json::from_value(value).map_err(|e| Error::SchemaViolation {
        path: "params".into(),
        msg: e.to_string(),
    })
}

fn bad_params(msg: impl Into<String>) -> Error {
    Error::SchemaViolation {
        path: "params".into(),
        msg: msg.into(),
    }
}

impl OpSpec {
    /// Parses an operator by catalog name with its JSON parameter object.
    pub fn parse(name: &str, value: serde_json::Value) -> Result<OpSpec> {
        let spec = match name {
            "op_impute_mean" => OpSpec::ImputeMean(params(value)?),
            "op_missing_as_category" => OpSpec::MissingAsCategory(params(value)?),
            "op_drop_constant" => {
                let extra: BTreeMap<String, serde_json::Value> = params(value)?;
                if !extra.is_empty() {
                    return Err(bad_params("op_drop_constant takes no parameters"));
                }
                OpSpec::DropConstant
            }
            "op_log_target" => OpSpec::LogTarget(params(value)?),
            "op_frequency_encode" => OpSpec::FrequencyEncode(params(value)?),
            "op_target_encode_oof" => OpSpec::TargetEncodeOof(params(value)?),
            "op_one_hot" => OpSpec::OneHot(params(value)?),
            "op_ordinal_encode" => OpSpec::OrdinalEncode(params(value)?),
            "op_cat_interaction" => OpSpec::CatInteraction(params(value)?),
            "op_arith_combine" => OpSpec::ArithCombine(params(value)?),
            "op_groupby_agg" => OpSpec::GroupbyAgg(params(value)?),
            "op_row_stats" => OpSpec::RowStats(params(value)?),
            "op_logical_and" => OpSpec::LogicalAnd(params(value)?),
            "op_num_to_cat" => OpSpec::NumToCat(params(value)?),
            "op_quantile_normalize" => OpSpec::QuantileNormalize(params(value)?),
            "op_standardize" => OpSpec::Standardize(params(value)?),
            "op_drop_correlated" => OpSpec::DropCorrelated(params(value)?),
            "op_drop_low_target_support" => OpSpec::DropLowTargetSupport(params(value)?),
            "op_feature_select_list" => OpSpec::FeatureSelectList(params(value)?),
            "op_pca_features" => OpSpec::PcaFeatures(params(value)?),
            "op_kmeans_features" => OpSpec::KmeansFeatures(params(value)?),
            "op_value_occurrence" => OpSpec::ValueOccurrence(params(value)?),
            "op_unique_value_smooth" => OpSpec::UniqueValueSmooth(params(value)?),
            "op_oof_model_feature" => OpSpec::OofModelFeature(params(value)?),
            "op_debug_leaky_freq" => OpSpec::DebugLeakyFreq(params(value)?),
            _ => return Err(Error::UnknownOperator(name.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> &'static str {
        match self {
            OpSpec::ImputeMean(_) => "op_impute_mean",
            OpSpec::MissingAsCategory(_) => "op_missing_as_category",
            OpSpec::DropConstant => "op_drop_constant",
            OpSpec::LogTarget(_) => "op_log_target",
            OpSpec::FrequencyEncode(_) => "op_frequency_encode",
            OpSpec::TargetEncodeOof(_) => "op_target_encode_oof",
            OpSpec::OneHot(_) => "op_one_hot",
            OpSpec::OrdinalEncode(_) => "op_ordinal_encode",
            OpSpec::CatInteraction(_) => "op_cat_interaction",
            OpSpec::ArithCombine(_) => "op_arith_combine",
            OpSpec::GroupbyAgg(_) => "op_groupby_agg",
            OpSpec::RowStats(_) => "op_row_stats",
            OpSpec::LogicalAnd(_) => "op_logical_and",
            OpSpec::NumToCat(_) => "op_num_to_cat",
            OpSpec::QuantileNormalize(_) => "op_quantile_normalize",
            OpSpec::Standardize(_) => "op_standardize",
            OpSpec::DropCorrelated(_) => "op_drop_correlated",
            OpSpec::DropLowTargetSupport(_) => "op_drop_low_target_support",
            OpSpec::FeatureSelectList(_) => "op_feature_select_list",
            OpSpec::PcaFeatures(_) => "op_pca_features",
            OpSpec::KmeansFeatures(_) => "op_kmeans_features",
            OpSpec::ValueOccurrence(_) => "op_value_occurrence",
            OpSpec::UniqueValueSmooth(_) => "op_unique_value_smooth",
            OpSpec::OofModelFeature(_) => "op_oof_model_feature",
            OpSpec::DebugLeakyFreq(_) => "op_debug_leaky_freq",
        }
    }

    /// JSON form of the parameters, for echoing a parsed spec back out.
    pub fn params_json(&self) -> serde_json::Value {
        fn to_v<T: Serialize>(t: &T) -> serde_json::Value {
            serde_json::to_value(t).expect("operator params serialize")
        }
        match self {
            OpSpec::ImputeMean(p)
            | OpSpec::MissingAsCategory(p)
            | OpSpec::OrdinalEncode(p)
            | OpSpec::QuantileNormalize(p)
            | OpSpec::LogicalAnd(p)
            | OpSpec::ValueOccurrence(p)
            | OpSpec::UniqueValueSmooth(p)
            | OpSpec::DebugLeakyFreq(p) => to_v(p),
            OpSpec::DropConstant => serde_json::json!({}),
            OpSpec::LogTarget(p) => to_v(p),
            OpSpec::FrequencyEncode(p) => to_v(p),
            OpSpec::TargetEncodeOof(p) => to_v(p),
            OpSpec::OneHot(p) => to_v(p),
            OpSpec::CatInteraction(p) => to_v(p),
            OpSpec::ArithCombine(p) => to_v(p),
            OpSpec::GroupbyAgg(p) => to_v(p),
            OpSpec::RowStats(p) => to_v(p),
            OpSpec::NumToCat(p) => to_v(p),
            OpSpec::Standardize(p) => to_v(p),
            OpSpec::DropCorrelated(p) => to_v(p),
            OpSpec::DropLowTargetSupport(p) => to_v(p),
            OpSpec::FeatureSelectList(p) => to_v(p),
            OpSpec::PcaFeatures(p) => to_v(p),
            OpSpec::KmeansFeatures(p) => to_v(p),
            OpSpec::OofModelFeature(p) => to_v(p),
        }
    }

    /// Operators whose fit needs a fold assignment.
    pub fn is_fold_aware(&self) -> bool {
        matches!(
            self,
            OpSpec::TargetEncodeOof(_) | OpSpec::OofModelFeature(_)
        )
    }

    /// Operators admitted by the plain standardized pipeline.
    pub fn standardized_ok(&self) -> bool {
        matches!(
            self,
            OpSpec::DropConstant
                | OpSpec::ImputeMean(_)
                | OpSpec::MissingAsCategory(_)
                | OpSpec::LogTarget(_)
        )
    }

    /// Parameter sanity independent of any data.
    fn validate(&self) -> Result<()> {
        fn need_cols(cols: &[String]) -> Result<()> {
            if cols.is_empty() {
                return Err(bad_params("`cols` must not be empty"));
            }
            check_unique(cols)
        }
        match self {
            // Dataset-agnostic preprocessing: empty cols = all applicable.
            OpSpec::ImputeMean(p)
            | OpSpec::MissingAsCategory(p)
            | OpSpec::OrdinalEncode(p)
            | OpSpec::QuantileNormalize(p) => check_unique(&p.cols),
            OpSpec::ValueOccurrence(p)
            | OpSpec::UniqueValueSmooth(p)
            | OpSpec::DebugLeakyFreq(p) => need_cols(&p.cols),
            OpSpec::DropConstant | OpSpec::LogTarget(_) => Ok(()),
            OpSpec::FrequencyEncode(p) => need_cols(&p.cols),
            OpSpec::TargetEncodeOof(p) => {
                need_cols(&p.cols)?;
                if !p.smoothing.is_finite() || p.smoothing < 0.0 {
                    return Err(bad_params("`smoothing` must be finite and >= 0"));
                }
                Ok(())
            }
            OpSpec::OneHot(p) => {
                need_cols(&p.cols)?;
                if p.max_cardinality == 0 {
                    return Err(bad_params("`max_cardinality` must be >= 1"));
                }
                Ok(())
            }
            OpSpec::CatInteraction(p) => {
                if p.cols.len() < 2 {
                    return Err(Error::OrderTooSmall(p.cols.len()));
                }
                check_unique(&p.cols)?;
                match (p.hashed, p.n_buckets) {
                    (true, None) => Err(bad_params("hashed interactions need `n_buckets`")),
                    (true, Some(0)) => Err(bad_params("`n_buckets` must be >= 1")),
                    (false, Some(_)) => {
                        Err(bad_params("`n_buckets` only applies when `hashed` is set"))
                    }
                    _ => Ok(()),
                }
            }
            OpSpec::ArithCombine(p) => {
                if p.pairs.is_empty() {
                    return Err(bad_params("`pairs` must not be empty"));
                }
                if p.ops.is_empty() {
                    return Err(bad_params("`ops` must not be empty"));
                }
                let mut seen = std::collections::HashSet::new();
                for op in &p.ops {
                    if !matches!(op.as_str(), "+" | "-" | "*" | "/") {
                        return Err(bad_params(format!(
                            "unknown arithmetic op `{op}` (expected +, -, *, /)"
                        )));
                    }
                    if !seen.insert(op.as_str()) {
                        return Err(bad_params(format!("duplicate arithmetic op `{op}`")));
                    }
                }
                Ok(())
            }
            OpSpec::GroupbyAgg(p) => {
                if p.stats.is_empty() {
                    return Err(bad_params("`stats` must not be empty"));
                }
                let mut seen = std::collections::HashSet::new();
                for s in &p.stats {
                    if !matches!(s.as_str(), "mean" | "std" | "count" | "percentile_rank") {
                        return Err(bad_params(format!("unknown groupby stat `{s}`")));
                    }
                    if !seen.insert(s.as_str()) {
                        return Err(bad_params(format!("duplicate groupby stat `{s}`")));
                    }
                }
                Ok(())
            }
            OpSpec::RowStats(p) => {
                need_cols(&p.cols)?;
                match (p.stat.as_str(), p.value) {
                    ("value_count", Some(v)) if v.is_finite() => Ok(()),
                    ("value_count", Some(_)) => Err(bad_params("`value` must be finite")),
                    ("value_count", None) => {
                        Err(bad_params("stat `value_count` requires `value`"))
                    }
                    ("nan_count" | "zero_count" | "sum", None) => Ok(()),
                    ("nan_count" | "zero_count" | "sum", Some(_)) => {
                        Err(bad_params("`value` only applies to stat `value_count`"))
                    }
                    (other, _) => Err(bad_params(format!("unknown row stat `{other}`"))),
                }
            }
            OpSpec::LogicalAnd(p) => {
                if p.cols.len() < 2 {
                    return Err(bad_params("`cols` must name at least two columns"));
                }
                check_unique(&p.cols)
            }
            OpSpec::NumToCat(p) => {
                need_cols(&p.cols)?;
                if p.decimals > 12 {
                    return Err(bad_params("`decimals` must be <= 12"));
                }
                Ok(())
            }
            OpSpec::Standardize(p) => match (p.cols.is_empty(), p.target) {
                (false, false) => check_unique(&p.cols),
                (true, true) => Ok(()),
                (true, false) => Err(bad_params("set either `cols` or `target`")),
                (false, true) => Err(bad_params("`cols` and `target` are mutually exclusive")),
            },
            OpSpec::DropCorrelated(p) => {
                if !p.threshold.is_finite() || p.threshold <= 0.0 || p.threshold > 1.0 {
                    return Err(bad_params("`threshold` must be in (0, 1]"));
                }
                Ok(())
            }
            OpSpec::DropLowTargetSupport(_) => Ok(()),
            OpSpec::FeatureSelectList(p) => {
                if p.keep.is_empty() {
                    return Err(bad_params("`keep` must not be empty"));
                }
                check_unique(&p.keep)
            }
            OpSpec::PcaFeatures(p) => {
                need_cols(&p.cols)?;
                if p.n_components == 0 {
                    return Err(bad_params("`n_components` must be >= 1"));
                }
                Ok(())
            }
            OpSpec::KmeansFeatures(p) => {
                need_cols(&p.cols)?;
                if p.k == 0 {
                    return Err(bad_params("`k` must be >= 1"));
                }
                if p.emit.is_empty() {
                    return Err(bad_params("`emit` must not be empty"));
                }
                let mut seen = std::collections::HashSet::new();
                for e in &p.emit {
                    if !matches!(e.as_str(), "cluster_id" | "distances") {
                        return Err(bad_params(format!("unknown emit kind `{e}`")));
                    }
                    if !seen.insert(e.as_str()) {
                        return Err(bad_params(format!("duplicate emit kind `{e}`")));
                    }
                }
                Ok(())
            }
            OpSpec::OofModelFeature(p) => {
                if p.input_cols.is_empty() {
                    return Err(bad_params("`input_cols` must not be empty"));
                }
                check_unique(&p.input_cols)?;
                if p.input_cols.contains(&p.output_col) {
                    return Err(bad_params("`output_col` must not be one of `input_cols`"));
                }
                if let Some(cfg) = &p.learner {
                    cfg.validate()?;
                }
                Ok(())
            }
        }
    }

    /// Estimates the operator's state from the context's scope.
    pub fn fit(&self, ctx: &FitCtx) -> Result<OpState> {
        Ok(match self {
            OpSpec::ImputeMean(p) => OpState::ImputeMean(basic::fit_impute_mean(ctx, p)?),
            OpSpec::MissingAsCategory(p) => {
                OpState::MissingAsCategory(basic::fit_missing_as_category(ctx, p)?)
            }
            OpSpec::DropConstant => OpState::DropConstant(basic::fit_drop_constant(ctx)?),
            OpSpec::LogTarget(p) => OpState::LogTarget(basic::fit_log_target(ctx, p)?),
            OpSpec::FrequencyEncode(p) => {
                OpState::FrequencyEncode(encode::fit_frequency_encode(ctx, p)?)
            }
            OpSpec::TargetEncodeOof(p) => {
                OpState::TargetEncodeOof(oof::fit_target_encode(ctx, p)?)
            }
            OpSpec::OneHot(p) => OpState::OneHot(encode::fit_one_hot(ctx, p)?),
            OpSpec::OrdinalEncode(p) => OpState::OrdinalEncode(encode::fit_ordinal(ctx, p)?),
            OpSpec::CatInteraction(p) => {
                OpState::CatInteraction(encode::fit_cat_interaction(ctx, p)?)
            }
            OpSpec::ArithCombine(p) => OpState::ArithCombine(combine::fit_arith(ctx, p)?),
            OpSpec::GroupbyAgg(p) => OpState::GroupbyAgg(combine::fit_groupby(ctx, p)?),
            OpSpec::RowStats(p) => OpState::RowStats(combine::fit_row_stats(ctx, p)?),
            OpSpec::LogicalAnd(p) => OpState::LogicalAnd(combine::fit_logical_and(ctx, p)?),
            OpSpec::NumToCat(p) => OpState::NumToCat(encode::fit_num_to_cat(ctx, p)?),
            OpSpec::QuantileNormalize(p) => {
                OpState::QuantileNormalize(basic::fit_quantile_normalize(ctx, p)?)
            }
            OpSpec::Standardize(p) => OpState::Standardize(basic::fit_standardize(ctx, p)?),
            OpSpec::DropCorrelated(p) => {
                OpState::DropCorrelated(select::fit_drop_correlated(ctx, p)?)
            }
            OpSpec::DropLowTargetSupport(p) => {
                OpState::DropLowTargetSupport(select::fit_drop_low_support(ctx, p)?)
            }
            OpSpec::FeatureSelectList(p) => {
                OpState::FeatureSelectList(select::fit_feature_select(ctx, p)?)
            }
            OpSpec::PcaFeatures(p) => OpState::PcaFeatures(project::fit_pca(ctx, p)?),
            OpSpec::KmeansFeatures(p) => OpState::KmeansFeatures(project::fit_kmeans(ctx, p)?),
            OpSpec::ValueOccurrence(p) => {
                OpState::ValueOccurrence(encode::fit_value_occurrence(ctx, p)?)
            }
            OpSpec::UniqueValueSmooth(p) => {
                OpState::UniqueValueSmooth(basic::fit_unique_smooth(ctx, p)?)
            }
            OpSpec::OofModelFeature(p) => OpState::OofModelFeature(oof::fit_oof_model(ctx, p)?),
            OpSpec::DebugLeakyFreq(p) => {
                OpState::FrequencyEncode(encode::fit_debug_leaky_freq(ctx, p)?)
            }
        })
    }
}

/// Fitted, serializable operator state. Transform is a pure function of
/// (state, table, split); replaying a state on the same table always yields
/// the same output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpState {
    ImputeMean(ImputeMeanState),
    MissingAsCategory(MissingAsCategoryState),
    DropConstant(DropColumnsState),
    LogTarget(LogTargetState),
    FrequencyEncode(FrequencyEncodeState),
    TargetEncodeOof(TargetEncodeState),
    OneHot(OneHotState),
    OrdinalEncode(OrdinalEncodeState),
    CatInteraction(CatInteractionState),
    ArithCombine(ArithCombineState),
    GroupbyAgg(GroupbyAggState),
    RowStats(RowStatsState),
    LogicalAnd(LogicalAndState),
    NumToCat(NumToCatState),
    QuantileNormalize(QuantileNormalizeState),
    Standardize(StandardizeState),
    DropCorrelated(DropColumnsState),
    DropLowTargetSupport(DropColumnsState),
    FeatureSelectList(FeatureSelectState),
    PcaFeatures(PcaState),
    KmeansFeatures(KmeansState),
    ValueOccurrence(ValueOccurrenceState),
    UniqueValueSmooth(UniqueValueSmoothState),
    OofModelFeature(OofModelState),
}

impl OpState {
    pub fn transform(&self, t: &Table, split: Split) -> Result<Table> {
        match self {
            OpState::ImputeMean(s) => basic::transform_impute_mean(s, t),
            OpState::MissingAsCategory(s) => basic::transform_missing_as_category(s, t),
            OpState::DropConstant(s)
            | OpState::DropCorrelated(s)
            | OpState::DropLowTargetSupport(s) => basic::transform_drop_columns(s, t),
            OpState::LogTarget(s) => basic::transform_log_target(s, t, split),
            OpState::FrequencyEncode(s) => encode::transform_frequency(s, t),
            OpState::TargetEncodeOof(s) => oof::transform_target_encode(s, t, split),
            OpState::OneHot(s) => encode::transform_one_hot(s, t),
            OpState::OrdinalEncode(s) => encode::transform_ordinal(s, t),
            OpState::CatInteraction(s) => encode::transform_cat_interaction(s, t),
            OpState::ArithCombine(s) => combine::transform_arith(s, t),
            OpState::GroupbyAgg(s) => combine::transform_groupby(s, t),
            OpState::RowStats(s) => combine::transform_row_stats(s, t),
            OpState::LogicalAnd(s) => combine::transform_logical_and(s, t),
            OpState::NumToCat(s) => encode::transform_num_to_cat(s, t),
            OpState::QuantileNormalize(s) => basic::transform_quantile_normalize(s, t),
            OpState::Standardize(s) => basic::transform_standardize(s, t, split),
            OpState::FeatureSelectList(s) => select::transform_feature_select(s, t),
            OpState::PcaFeatures(s) => project::transform_pca(s, t),
            OpState::KmeansFeatures(s) => project::transform_kmeans(s, t),
            OpState::ValueOccurrence(s) => encode::transform_value_occurrence(s, t, split),
            OpState::UniqueValueSmooth(s) => basic::transform_unique_smooth(s, t),
            OpState::OofModelFeature(s) => oof::transform_oof_model(s, t, split),
        }
    }
}
