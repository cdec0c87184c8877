//! Config-driven experiment runner: load → folds → pipeline → per-fold
//! HPO and training → CV ensembling → metrics, leaderboard percentile, and
//! run-directory artifacts.
//!
//! One experiment is one (dataset, pipeline, learner, regime) cell. The
//! held-out fold plays three documented roles at once: it is the early-
//! stopping validation set, the HPO objective, and the fold metric. Test
//! predictions of the per-fold models are averaged into a single ensemble;
//! for transformed regression targets the average happens in the trained
//! (transformed) space and the inverse transform is applied exactly once,
//! to the ensemble.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::{make_folds, FoldAssignment, FoldStrategy};
use crate::hpo::{
    parse_space, run_regime, Assignment, Regime, SearchSpace, Trial,
};
use crate::io::{self, format_f64, Leaderboard, SchemaConfig};
use crate::learners::{self, external, FeatureMatrix, LearnerConfig, LearnerKind};
use crate::metrics::{
    compute_metric, metric_direction, Direction, MetricValue, Predictions,
};
use crate::ops::{FitCtx, FitScope, OpSpec, Split};
use crate::pipeline::{audit_leakage, fit_pipeline, AuditReport, PipelineKind, PipelineSpec};
use crate::table::{Column, ColumnKind, Role, Table, TargetTransform, Task};
use crate::util::splitmix64;

/// File name of the ensembled test predictions inside a run directory.
pub const ENSEMBLED_FILE: &str = "ensembled_predictions.csv";

/// Reference to a leaderboard score file plus the explicit orientation of
/// its scores (never inferred from the metric name).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderboardRef {
    pub csv: PathBuf,
    pub direction: Direction,
}

/// One experiment cell. Relative paths are resolved against the config
/// file's directory by [`load_config`]; configs built in memory should use
/// absolute paths.
///
/// The dataset metric comes from the schema document (its `metric` field),
/// falling back to auc / logloss / rmse by task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset/experiment label; first index of the result matrix and part
    /// of artifact paths, so it is restricted to `[A-Za-z0-9._-]`.
    pub name: String,
    pub train_csv: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
    /// Ingestion schema document (column kinds, target, task, metric).
    pub schema: PathBuf,
    /// Pipeline spec document.
    pub pipeline: PathBuf,
    pub learner: LearnerKind,
    /// Command line for the external learner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// Search-space document; required for the sampling regimes, optional
    /// for the default regime (built-in defaults apply when absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<PathBuf>,
    pub regime: Regime,
    pub n_folds: usize,
    pub strategy: FoldStrategy,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaderboard: Option<LeaderboardRef>,
}

impl ExperimentConfig {
    /// Joins every relative path in the config onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.train_csv);
        if let Some(p) = &mut self.test_csv {
            resolve(p);
        }
        resolve(&mut self.schema);
        resolve(&mut self.pipeline);
        if let Some(p) = &mut self.space {
            resolve(p);
        }
        if let Some(l) = &mut self.leaderboard {
            resolve(&mut l.csv);
        }
    }

    /// Checks the constraints that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c))
        {
            return Err(Error::Config(format!(
                "experiment name {:?} must be non-empty and use only letters, digits, '.', '_', '-'",
                self.name
            )));
        }
        if self.n_folds < 2 {
            return Err(Error::Config(format!(
                "n_folds must be at least 2, got {}",
                self.n_folds
            )));
        }
        if self.learner == LearnerKind::External && self.command.is_none() {
            return Err(Error::Config("external learner needs a command".into()));
        }
        if self.regime != Regime::Default && self.space.is_none() {
            return Err(Error::Config(format!(
                "regime {} needs a search-space document",
                self.regime
            )));
        }
        Ok(())
    }
}

/// Reads a config file and resolves its relative paths against the file's
/// directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = io::read_json(path)?;
    if let Some(base) = path.parent() {
        cfg.resolve_paths(base);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Outcome of one experiment cell. Fold metrics are reported in the space
/// the models were trained in; the `_raw` twins hold original-target-space
/// counterparts and exist only when a target transform was active.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub experiment: String,
    pub pipeline: PipelineKind,
    pub learner: LearnerKind,
    pub regime: Regime,
    pub seed: u64,
    pub metric: String,
    /// Final model's metric on its held-out fold, one entry per fold.
    pub fold_metrics: Vec<MetricValue>,
    pub cv_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_metrics_raw: Option<Vec<MetricValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_mean_raw: Option<f64>,
    /// File name of the ensembled test predictions, relative to the run
    /// directory; absent when the run had no test features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensembled_predictions: Option<String>,
    /// Ensemble metric against test targets, when the test file had them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_metric: Option<MetricValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_metric_raw: Option<MetricValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
    /// HPO trial history, one list per fold.
    pub trials: Vec<Vec<Trial>>,
}

impl RunResult {
    /// One score standing for the run: the original-space test metric when
    /// test targets were available, else the CV mean (original space when
    /// the target was transformed). This is also the value scored against
    /// the leaderboard.
    pub fn headline_score(&self) -> f64 {
        self.test_metric_raw
            .map(|m| m.value)
            .or(self.test_metric.map(|m| m.value))
            .or(self.cv_mean_raw)
            .unwrap_or(self.cv_mean)
    }

    pub fn direction(&self) -> Result<Direction> {
        metric_direction(&self.metric)
    }

    /// Fixed-format one-liner for scraping:
    /// `<dataset>\t<pipeline>\t<learner>\t<regime>\t<metric>=<value>\t<percentile>`.
    pub fn summary_line(&self) -> String {
        let pct = self
            .percentile
            .map(format_f64)
            .unwrap_or_else(|| "-".into());
        format!(
            "{}\t{}\t{}\t{}\t{}={}\t{}",
            self.experiment,
            self.pipeline,
            self.learner,
            self.regime,
            self.metric,
            format_f64(self.headline_score()),
            pct
        )
    }
}

/// Grid of run results indexed by (dataset, pipeline, learner, regime).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResultMatrix {
    pub cells: Vec<RunResult>,
}

pub const MATRIX_CSV_HEADER: &str = "dataset,pipeline,learner,regime,metric,percentile";

impl ResultMatrix {
    fn key(r: &RunResult) -> (String, PipelineKind, LearnerKind, Regime) {
        (r.experiment.clone(), r.pipeline, r.learner, r.regime)
    }

    /// Adds a cell; the four-part index must be unique.
    pub fn insert(&mut self, r: RunResult) -> Result<()> {
        if self.cells.iter().any(|c| Self::key(c) == Self::key(&r)) {
            return Err(Error::Config(format!(
                "duplicate result cell: {}/{}/{}/{}",
                r.experiment, r.pipeline, r.learner, r.regime
            )));
        }
        self.cells.push(r);
        Ok(())
    }

    pub fn get(
        &self,
        experiment: &str,
        pipeline: PipelineKind,
        learner: LearnerKind,
        regime: Regime,
    ) -> Option<&RunResult> {
        self.cells.iter().find(|c| {
            c.experiment == experiment
                && c.pipeline == pipeline
                && c.learner == learner
                && c.regime == regime
        })
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    /// CSV export for external statistical tooling, sorted by index for
    /// byte stability. `metric` is each run's headline score; `percentile`
    /// is empty when no leaderboard was configured.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<&RunResult> = self.cells.iter().collect();
        rows.sort_by_cached_key(|r| {
            (
                r.experiment.clone(),
                r.pipeline.to_string(),
                r.learner.to_string(),
                r.regime.to_string(),
            )
        });
        let mut out = String::from(MATRIX_CSV_HEADER);
        out.push('\n');
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.experiment,
                r.pipeline,
                r.learner,
                r.regime,
                format_f64(r.headline_score()),
                r.percentile.map(format_f64).unwrap_or_default()
            ));
        }
        out
    }
}

/// Elementwise mean of per-fold test predictions. Multiclass rows are
/// renormalized to sum to 1 afterwards; regression callers are expected to
/// pass transformed-space predictions and invert the result once.
pub fn ensemble_folds(folds: &[Predictions], task: Task) -> Result<Predictions> {
    let mean = Predictions::mean(folds)?;
    Ok(match task {
        Task::Multiclass(_) => mean.renormalize_rows(),
        _ => mean,
    })
}

/// Fraction of leaderboard entries not strictly better than `score` (ties
/// count in the submitter's favor). 1.0 = top of the board, 0.0 = below
/// every entry.
pub fn leaderboard_percentile(lb: &Leaderboard, score: f64) -> Result<f64> {
    if !score.is_finite() {
        return Err(Error::NonFinite);
    }
    if lb.scores.is_empty() {
        return Err(Error::Config("leaderboard has no entries".into()));
    }
    let better = lb
        .scores
        .iter()
        .filter(|&&s| match lb.direction {
            Direction::HigherBetter => s > score,
            Direction::LowerBetter => s < score,
        })
        .count();
    Ok(1.0 - better as f64 / lb.scores.len() as f64)
}

// ------------------------------------------------------------------ loading

struct LoadedInputs {
    train: Table,
    test: Option<Table>,
    space: Option<SearchSpace>,
    leaderboard: Option<Leaderboard>,
    pipeline: PipelineSpec,
    metric: String,
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))
}

fn csv_headers(path: &Path) -> Result<Vec<String>> {
    let p = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::io(&p, std::io::Error::other(e)))?;
    Ok(headers.iter().map(str::to_string).collect())
}

fn default_metric(task: Task) -> &'static str {
    match task {
        Task::Binary => "auc",
        Task::Multiclass(_) => "logloss",
        Task::Regression => "rmse",
    }
}

fn load_inputs(cfg: &ExperimentConfig) -> Result<LoadedInputs> {
    let schema: SchemaConfig = io::read_json(&cfg.schema)?;
    schema.validate()?;
    let train = io::load_csv(&cfg.train_csv, &schema)?;
    let task = train
        .target_spec
        .map(|s| s.task)
        .ok_or_else(|| Error::Config("schema must declare a target and task".into()))?;
    let test = match &cfg.test_csv {
        Some(p) => {
            // Test files may carry target values (synthetic evaluations) or
            // not (submission-style); load accordingly.
            let s = match &schema.target {
                Some(t) if csv_headers(p)?.iter().any(|h| h == t) => schema.clone(),
                _ => schema.without_target(),
            };
            Some(io::load_csv(p, &s)?)
        }
        None => None,
    };
    let metric = schema
        .metric
        .clone()
        .unwrap_or_else(|| default_metric(task).to_string());
    let space = match &cfg.space {
        Some(p) => Some(parse_space(&read_text(p)?)?),
        None => None,
    };
    let pipeline = PipelineSpec::parse_str(&read_text(&cfg.pipeline)?)?;
    let leaderboard = match &cfg.leaderboard {
        Some(l) => Some(io::load_leaderboard(&l.csv, l.direction)?),
        None => None,
    };
    Ok(LoadedInputs {
        train,
        test,
        space,
        leaderboard,
        pipeline,
        metric,
    })
}

/// Loads and validates everything a config references without training
/// anything: the schema, pipeline, search space, and leaderboard documents,
/// plus CSV header sanity. The first failure names the offending piece.
pub fn preflight(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let schema: SchemaConfig = io::read_json(&cfg.schema)?;
    schema.validate()?;
    let target = schema
        .target
        .as_deref()
        .ok_or_else(|| Error::Config("schema must declare a target and task".into()))?;
    let pipeline = PipelineSpec::parse_str(&read_text(&cfg.pipeline)?)?;
    if let Some(p) = &cfg.space {
        parse_space(&read_text(p)?)?;
    }
    if let Some(l) = &cfg.leaderboard {
        io::load_leaderboard(&l.csv, l.direction)?;
    }
    if !csv_headers(&cfg.train_csv)?.iter().any(|h| h == target) {
        return Err(Error::MissingTarget(target.to_string()));
    }
    if pipeline.needs_test() && cfg.test_csv.is_none() {
        return Err(Error::ScopeDataMissing(
            "the pipeline pools test rows but the config names no test csv".into(),
        ));
    }
    if let Some(p) = &cfg.test_csv {
        csv_headers(p)?; // readable, well-formed header
    }
    Ok(())
}

// ----------------------------------------------------------------- running

/// Per-fold seed stream; mixing in the index keeps folds independent of one
/// another and of the pipeline's per-step seeds.
fn fold_seed(master: u64, fold: usize) -> u64 {
    splitmix64(master ^ (fold as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

fn hpo_seed(fold_seed: u64) -> u64 {
    splitmix64(fold_seed ^ 0x517c_c1b7_2722_0a95)
}

fn gather(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| values[r]).collect()
}

/// Model-side preprocessing: the built-in learners consume a numeric
/// matrix, so any categorical feature still present after the pipeline is
/// ordinally encoded against its train-side dictionary (missing stays
/// missing, unseen test categories become −1).
fn encode_remaining_categoricals(
    train: &Table,
    test: Option<&Table>,
    seed: u64,
) -> Result<(Table, Option<Table>)> {
    let cats: Vec<String> = train
        .feature_columns()
        .filter(|c| c.kind() == ColumnKind::Categorical)
        .map(|c| c.name.clone())
        .collect();
    if cats.is_empty() {
        return Ok((train.clone(), test.cloned()));
    }
    let spec = OpSpec::parse("op_ordinal_encode", serde_json::json!({ "cols": cats }))?;
    let ctx = FitCtx {
        train,
        test,
        scope: FitScope::TrainOnly,
        folds: None,
        seed,
        prefix: String::new(),
    };
    let state = spec.fit(&ctx)?;
    let new_train = state.transform(train, Split::Train)?;
    let new_test = test.map(|t| state.transform(t, Split::Test)).transpose()?;
    Ok((new_train, new_test))
}

/// Everything the per-fold workers share.
struct RunCtx<'a> {
    cfg: &'a ExperimentConfig,
    run_dir: &'a Path,
    metric: &'a str,
    task: Task,
    space: Option<&'a SearchSpace>,
    x: Option<&'a FeatureMatrix>,
    x_test: Option<&'a FeatureMatrix>,
    y: &'a [f64],
    ext_train: Option<&'a Table>,
    ext_test: Option<&'a Table>,
    target_name: Option<&'a str>,
}

struct FoldOutcome {
    valid_pred: Predictions,
    test_pred: Option<Predictions>,
    metric: MetricValue,
    trials: Vec<Trial>,
}

/// Assembles the per-trial learner configuration: sampled hyperparameters,
/// the run metric for early stopping, a fold-specific seed.
fn learner_config(
    cfg: &ExperimentConfig,
    params: &Assignment,
    metric: &str,
    seed: u64,
) -> LearnerConfig {
    let mut lc = LearnerConfig::new(cfg.learner);
    lc.command = cfg.command.clone();
    lc.hyperparameters = params.clone();
    lc.metric = Some(metric.to_string());
    lc.seed = seed;
    lc
}

/// Regime runner that tolerates a missing space for the default regime by
/// searching an empty space (one trial of built-in defaults).
fn run_hpo(
    regime: Regime,
    space: Option<&SearchSpace>,
    objective: impl FnMut(&Assignment) -> Option<f64>,
    seed: u64,
) -> Result<(Assignment, Vec<Trial>)> {
    match space {
        Some(space) => run_regime(regime, space, objective, seed),
        None => {
            debug_assert_eq!(regime, Regime::Default, "validated by the config");
            let empty = SearchSpace { params: Vec::new() };
            run_regime(regime, &empty, objective, seed)
        }
    }
}

fn run_fold(ctx: &RunCtx, folds: &FoldAssignment, f: usize) -> Result<FoldOutcome> {
    let tr_rows = folds.out_of_fold_rows(f);
    let va_rows = folds.fold_rows(f);
    let seed_f = fold_seed(ctx.cfg.seed, f);
    let y_va = gather(ctx.y, &va_rows);

    if ctx.cfg.learner == LearnerKind::External {
        return run_fold_external(ctx, f, &tr_rows, &va_rows, &y_va, seed_f);
    }

    let x = ctx.x.expect("matrix built for built-in learners");
    let x_tr = x.take_rows(&tr_rows);
    let x_va = x.take_rows(&va_rows);
    let y_tr = gather(ctx.y, &tr_rows);

    let evaluate = |params: &Assignment| -> Result<(learners::FittedLearner, Predictions, MetricValue)> {
        let lc = learner_config(ctx.cfg, params, ctx.metric, seed_f);
        let model = learners::fit(&lc, ctx.task, &x_tr, &y_tr, Some((&x_va, &y_va)))?;
        let va_pred = learners::predict(&model, &x_va)?;
        let m = compute_metric(ctx.metric, &y_va, &va_pred)?;
        Ok((model, va_pred, m))
    };

    let (best, trials) = run_hpo(
        ctx.cfg.regime,
        ctx.space,
        |p| evaluate(p).ok().map(|(_, _, m)| m.objective()),
        hpo_seed(seed_f),
    )?;
    let (model, valid_pred, metric) = evaluate(&best)?;
    let test_pred = ctx
        .x_test
        .map(|xt| learners::predict(&model, xt))
        .transpose()?;
    Ok(FoldOutcome {
        valid_pred,
        test_pred,
        metric,
        trials,
    })
}

fn run_fold_external(
    ctx: &RunCtx,
    f: usize,
    tr_rows: &[usize],
    va_rows: &[usize],
    y_va: &[f64],
    seed_f: u64,
) -> Result<FoldOutcome> {
    let command = ctx.cfg.command.as_deref().expect("validated");
    let target = ctx.target_name.expect("target checked during load");
    let full = ctx.ext_train.expect("bundle tables built");
    let train_t = full.take_rows(tr_rows);
    let valid_t = full.take_rows(va_rows);
    let test_t = ctx.ext_test;
    let fold_dir = ctx.run_dir.join("folds").join(format!("fold_{f}"));

    let evaluate = |params: &Assignment,
                    label: String|
     -> Result<(Predictions, Option<Predictions>, MetricValue)> {
        let dir = fold_dir.join(label);
        let manifest = external::ExternalManifest {
            target,
            task: ctx.task,
            metric: ctx.metric,
            hyperparameters: params,
            seed: seed_f,
            fold: f,
        };
        external::write_fold_bundle(&dir, &train_t, &valid_t, test_t, &manifest)?;
        let (vp, tp) = external::run_external(
            command,
            &dir,
            ctx.task,
            va_rows.len(),
            test_t.map(Table::n_rows),
        )?;
        let m = compute_metric(ctx.metric, y_va, &vp)?;
        Ok((vp, tp, m))
    };

    let mut counter = 0usize;
    let objective = |params: &Assignment| {
        let label = format!("trial_{counter}");
        counter += 1;
        evaluate(params, label).ok().map(|(_, _, m)| m.objective())
    };
    let (best, trials) = run_hpo(ctx.cfg.regime, ctx.space, objective, hpo_seed(seed_f))?;
    let (valid_pred, test_pred, metric) = evaluate(&best, "final".into())?;
    Ok(FoldOutcome {
        valid_pred,
        test_pred,
        metric,
        trials,
    })
}

fn ids_at(t: &Table, rows: &[usize]) -> Column {
    match t.id_column() {
        Some(c) => c.take_rows(rows),
        None => Column::numeric("id", rows.iter().map(|&r| r as f64).collect()),
    }
}

/// Runs one experiment end to end and writes its artifacts into `run_dir`:
/// `config.json`, `folds.json`, `pipeline.json`, per-fold prediction files
/// (in model space), the ensembled test predictions (in original target
/// space), and `metrics.json` (the returned [`RunResult`], byte-stable for
/// a fixed config and inputs).
///
/// `jobs` > 1 trains folds in a thread pool of that size; the outputs are
/// byte-identical regardless because every fold is independently seeded and
/// results are reduced in fold order.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    jobs: usize,
) -> Result<RunResult> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    std::fs::create_dir_all(run_dir)
        .map_err(|e| Error::io(run_dir.display().to_string(), e).at_stage("artifacts"))?;

    let inputs = load_inputs(cfg).map_err(|e| e.at_stage("load"))?;
    let folds = make_folds(&inputs.train, &cfg.strategy, cfg.n_folds, cfg.seed)
        .map_err(|e| e.at_stage("folds"))?;
    let fitted = fit_pipeline(
        &inputs.pipeline,
        &inputs.train,
        inputs.test.as_ref(),
        Some(&folds),
        cfg.seed,
    )
    .map_err(|e| e.at_stage("pipeline"))?;

    let (etrain, etest) =
        encode_remaining_categoricals(&fitted.train, fitted.test.as_ref(), cfg.seed)
            .map_err(|e| e.at_stage("prepare"))?;
    let tspec = etrain.target_spec.expect("target checked during load");
    let task = tspec.task;
    let transform = tspec.transform;
    let y = etrain.target_values().map_err(|e| e.at_stage("prepare"))?;
    let target_name = etrain.target_column().map(|c| c.name.clone());

    // Built-in learners read dense numeric matrices; the external adapter
    // reads tables re-exported as CSV (minus the id column, and minus any
    // target column on the test side).
    let (x, x_test) = if cfg.learner == LearnerKind::External {
        (None, None)
    } else {
        let x = FeatureMatrix::from_table(&etrain).map_err(|e| e.at_stage("prepare"))?;
        let xt = etest
            .as_ref()
            .map(FeatureMatrix::from_table)
            .transpose()
            .map_err(|e| e.at_stage("prepare"))?;
        (Some(x), xt)
    };
    let (ext_train, ext_test) = if cfg.learner == LearnerKind::External {
        let strip = |t: &Table, roles: &[Role]| -> Result<Table> {
            let drop: Vec<String> = t
                .columns()
                .iter()
                .filter(|c| roles.contains(&c.role))
                .map(|c| c.name.clone())
                .collect();
            t.drop_columns(&drop)
        };
        let tr = strip(&etrain, &[Role::Id]).map_err(|e| e.at_stage("prepare"))?;
        let te = etest
            .as_ref()
            .map(|t| strip(t, &[Role::Id, Role::Target]))
            .transpose()
            .map_err(|e| e.at_stage("prepare"))?;
        (Some(tr), te)
    } else {
        (None, None)
    };

    let ctx = RunCtx {
        cfg,
        run_dir,
        metric: &inputs.metric,
        task,
        space: inputs.space.as_ref(),
        x: x.as_ref(),
        x_test: x_test.as_ref(),
        y: &y,
        ext_train: ext_train.as_ref(),
        ext_test: ext_test.as_ref(),
        target_name: target_name.as_deref(),
    };

    let fold_result = |f: usize| {
        run_fold(&ctx, &folds, f).map_err(|e| e.at_stage(&format!("fold_{f}")))
    };
    let outcomes: Vec<FoldOutcome> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
        pool.install(|| {
            (0..cfg.n_folds)
                .into_par_iter()
                .map(fold_result)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        (0..cfg.n_folds).map(fold_result).collect::<Result<Vec<_>>>()?
    };

    let mut fold_metrics = Vec::with_capacity(outcomes.len());
    let mut valid_preds = Vec::with_capacity(outcomes.len());
    let mut test_preds = Vec::with_capacity(outcomes.len());
    let mut trials = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        fold_metrics.push(o.metric);
        valid_preds.push(o.valid_pred);
        test_preds.push(o.test_pred);
        trials.push(o.trials);
    }
    let cv_mean =
        fold_metrics.iter().map(|m| m.value).sum::<f64>() / fold_metrics.len() as f64;

    // Original-space twins when the target was transformed.
    let (fold_metrics_raw, cv_mean_raw) = if transform != TargetTransform::None {
        let mut raws = Vec::with_capacity(valid_preds.len());
        for (f, vp) in valid_preds.iter().enumerate() {
            let va_rows = folds.fold_rows(f);
            let y_raw: Vec<f64> = va_rows.iter().map(|&r| transform.invert(y[r])).collect();
            let pred_raw = vp.map(|v| transform.invert(v));
            raws.push(
                compute_metric(&inputs.metric, &y_raw, &pred_raw)
                    .map_err(|e| e.at_stage("evaluate"))?,
            );
        }
        let mean = raws.iter().map(|m| m.value).sum::<f64>() / raws.len() as f64;
        (Some(raws), Some(mean))
    } else {
        (None, None)
    };

    // CV ensemble of the test predictions, averaged in model space;
    // the inverse target transform is applied exactly once, afterwards.
    let per_fold_test: Vec<Predictions> =
        test_preds.iter().flatten().cloned().collect();
    let (ens, ens_raw) = if per_fold_test.len() == cfg.n_folds {
        let e = ensemble_folds(&per_fold_test, task).map_err(|e| e.at_stage("ensemble"))?;
        let raw = e.map(|v| transform.invert(v));
        (Some(e), Some(raw))
    } else {
        (None, None)
    };

    let mut test_metric = None;
    let mut test_metric_raw = None;
    if let (Some(e), Some(et)) = (&ens, &etest) {
        if et.target_column().is_some() {
            let y_raw = et.target_values().map_err(|er| er.at_stage("evaluate"))?;
            let y_t: Vec<f64> = y_raw.iter().map(|&v| transform.apply(v)).collect();
            test_metric = Some(
                compute_metric(&inputs.metric, &y_t, e).map_err(|er| er.at_stage("evaluate"))?,
            );
            if transform != TargetTransform::None {
                let er_raw = ens_raw.as_ref().expect("built alongside ens");
                test_metric_raw = Some(
                    compute_metric(&inputs.metric, &y_raw, er_raw)
                        .map_err(|er| er.at_stage("evaluate"))?,
                );
            }
        }
    }

    let mut result = RunResult {
        experiment: cfg.name.clone(),
        pipeline: inputs.pipeline.kind,
        learner: cfg.learner,
        regime: cfg.regime,
        seed: cfg.seed,
        metric: inputs.metric.clone(),
        fold_metrics,
        cv_mean,
        fold_metrics_raw,
        cv_mean_raw,
        ensembled_predictions: ens_raw.as_ref().map(|_| ENSEMBLED_FILE.to_string()),
        test_metric,
        test_metric_raw,
        percentile: None,
        trials,
    };
    if let Some(lb) = &inputs.leaderboard {
        result.percentile = Some(
            leaderboard_percentile(lb, result.headline_score())
                .map_err(|e| e.at_stage("evaluate"))?,
        );
    }

    let artifacts = || -> Result<()> {
        io::write_json(&run_dir.join("config.json"), cfg)?;
        io::write_json(&run_dir.join("folds.json"), &folds)?;
        io::write_json(&run_dir.join("pipeline.json"), &fitted.pipeline)?;
        for (f, vp) in valid_preds.iter().enumerate() {
            let va_rows = folds.fold_rows(f);
            let ids = ids_at(&etrain, &va_rows);
            io::write_predictions(
                &run_dir.join(format!("fold_{f}_valid_pred.csv")),
                Some(&ids),
                vp,
            )?;
            if let Some(tp) = &test_preds[f] {
                io::write_predictions(
                    &run_dir.join(format!("fold_{f}_test_pred.csv")),
                    etest.as_ref().and_then(Table::id_column),
                    tp,
                )?;
            }
        }
        if let Some(raw) = &ens_raw {
            io::write_predictions(
                &run_dir.join(ENSEMBLED_FILE),
                etest.as_ref().and_then(Table::id_column),
                raw,
            )?;
        }
        io::write_json(&run_dir.join("metrics.json"), &result)
    };
    artifacts().map_err(|e| e.at_stage("artifacts"))?;
    Ok(result)
}

/// Runs the leakage audit for a config: loads the data exactly as
/// [`run_experiment`] would, then probes every pipeline step.
pub fn run_audit(cfg: &ExperimentConfig, n_probes: usize) -> Result<AuditReport> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let inputs = load_inputs(cfg).map_err(|e| e.at_stage("load"))?;
    let folds = make_folds(&inputs.train, &cfg.strategy, cfg.n_folds, cfg.seed)
        .map_err(|e| e.at_stage("folds"))?;
    audit_leakage(
        &inputs.pipeline,
        &inputs.train,
        inputs.test.as_ref(),
        Some(&folds),
        cfg.seed,
        n_probes,
    )
}

// Re-exported for the matrix driver: hashes the artifacts a cell depends on
// so interrupted grids can resume without repeating finished work.
/// Content fingerprint of a config and every file it references.
pub fn config_digest(cfg: &ExperimentConfig) -> Result<String> {
    use crate::util::fnv1a64;
    let mut parts: Vec<String> = Vec::new();
    parts.push(serde_json::to_string(cfg)?);
    let mut files: Vec<&PathBuf> = vec![&cfg.train_csv, &cfg.schema, &cfg.pipeline];
    if let Some(p) = &cfg.test_csv {
        files.push(p);
    }
    if let Some(p) = &cfg.space {
        files.push(p);
    }
    if let Some(l) = &cfg.leaderboard {
        files.push(&l.csv);
    }
    for f in files {
        let bytes =
            std::fs::read(f).map_err(|e| Error::io(f.display().to_string(), e))?;
        parts.push(format!("{:016x}", fnv1a64(&bytes)));
    }
    Ok(format!("{:016x}", fnv1a64(parts.join("\u{1f}").as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    // ------------------------------------------------------------ ensembling

    #[test]
    fn ensemble_mean_and_bounds() {
        let a = Predictions::single(vec![0.2]);
        let b = Predictions::single(vec![0.4]);
        let e = ensemble_folds(&[a.clone(), b.clone()], Task::Binary).unwrap();
        assert!((e.values()[0] - 0.3).abs() < 1e-15);

        // identical folds → identity
        let e = ensemble_folds(&[a.clone(), a.clone()], Task::Binary).unwrap();
        assert_eq!(e.values(), &[0.2]);

        // elementwise bounds
        let f1 = Predictions::single(vec![0.1, 0.9, 0.5]);
        let f2 = Predictions::single(vec![0.3, 0.1, 0.5]);
        let e = ensemble_folds(&[f1.clone(), f2.clone()], Task::Regression).unwrap();
        for i in 0..3 {
            let lo = f1.values()[i].min(f2.values()[i]);
            let hi = f1.values()[i].max(f2.values()[i]);
            assert!(lo <= e.values()[i] && e.values()[i] <= hi);
        }

        assert!(matches!(
            ensemble_folds(&[a, Predictions::single(vec![0.1, 0.2])], Task::Binary),
            Err(Error::ShapeMismatch)
        ));
    }

    #[test]
    fn multiclass_ensemble_rows_renormalize() {
        let f1 = Predictions::new(vec![0.7, 0.2, 0.1, 0.1, 0.8, 0.1], 3).unwrap();
        let f2 = Predictions::new(vec![0.5, 0.1, 0.4, 0.2, 0.2, 0.6], 3).unwrap();
        let f3 = Predictions::new(vec![0.3, 0.3, 0.4, 0.1, 0.1, 0.8], 3).unwrap();
        let e = ensemble_folds(&[f1, f2, f3], Task::Multiclass(3)).unwrap();
        for r in 0..2 {
            let s: f64 = e.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r} sums to {s}");
        }
    }

    // ------------------------------------------------------------ percentile

    fn lb(scores: &[f64], direction: Direction) -> Leaderboard {
        Leaderboard {
            scores: scores.to_vec(),
            direction,
        }
    }

    #[test]
    fn percentile_forced_examples() {
        let board = lb(&[0.9, 0.8, 0.7], Direction::HigherBetter);
        assert!(
            (leaderboard_percentile(&board, 0.85).unwrap() - 2.0 / 3.0).abs() < 1e-15
        );
        assert_eq!(leaderboard_percentile(&board, 0.95).unwrap(), 1.0);
        assert_eq!(leaderboard_percentile(&board, 0.5).unwrap(), 0.0);
        // tie counts as not-better: matching the best entry scores 1.0
        assert_eq!(leaderboard_percentile(&board, 0.9).unwrap(), 1.0);
    }

    #[test]
    fn percentile_is_monotone_and_direction_aware() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..1.0)).collect();
        let board = lb(&scores, Direction::HigherBetter);
        let mut prev = -1.0;
        for i in 0..=20 {
            let s = i as f64 / 20.0;
            let p = leaderboard_percentile(&board, s).unwrap();
            assert!(p >= prev);
            prev = p;
        }
        let lower = lb(&[1.0, 2.0, 3.0], Direction::LowerBetter);
        assert_eq!(leaderboard_percentile(&lower, 0.5).unwrap(), 1.0);
        assert_eq!(leaderboard_percentile(&lower, 4.0).unwrap(), 0.0);
        assert!(matches!(
            leaderboard_percentile(&lower, f64::NAN),
            Err(Error::NonFinite)
        ));
    }

    // --------------------------------------------------------- run fixtures

    use std::path::Path;

    fn write(path: &Path, text: &str) {
        std::fs::write(path, text).unwrap();
    }

    /// 60-row binary dataset: y depends on num1, cat has 3 levels plus some
    /// missing cells, num2 carries a few missing values.
    fn write_dataset(dir: &Path, with_test: bool) -> (PathBuf, Option<PathBuf>) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut rows = String::from("id,num1,num2,cat,y\n");
        let mut test_rows = String::from("id,num1,num2,cat,y\n");
        for i in 0..80 {
            let num1: f64 = rng.random_range(-2.0..2.0);
            let num2 = if i % 11 == 0 {
                String::new()
            } else {
                format!("{:.3}", rng.random_range(0.0..5.0))
            };
            let cat = match i % 4 {
                0 => "a",
                1 => "b",
                2 => "",
                _ => "c",
            };
            let noise: f64 = rng.random_range(-0.4..0.4);
            let y = u8::from(num1 + noise > 0.0);
            let line = format!("{i},{num1:.4},{num2},{cat},{y}\n");
            if i < 60 {
                rows.push_str(&line);
            } else {
                test_rows.push_str(&line);
            }
        }
        let train = dir.join("train.csv");
        write(&train, &rows);
        let test = if with_test {
            let p = dir.join("test.csv");
            write(&p, &test_rows);
            Some(p)
        } else {
            None
        };
        (train, test)
    }

    fn write_schema(dir: &Path) -> PathBuf {
        let p = dir.join("schema.json");
        write(
            &p,
            r#"{
  "target": "y",
  "id": "id",
  "task": "binary",
  "metric": "auc",
  "kinds": {"cat": "categorical"}
}"#,
        );
        p
    }

    fn write_pipeline(dir: &Path, kind: &str, extra_tta: bool) -> PathBuf {
        let p = dir.join("pipeline.json");
        let scope = if extra_tta {
            r#", "scope": "train_plus_test""#
        } else {
            ""
        };
        let doc = format!(
            r#"{{
  "kind": "{kind}",
  "steps": [
    {{"op": "op_drop_constant"}},
    {{"op": "op_impute_mean"}},
    {{"op": "op_frequency_encode", "params": {{"cols": ["cat"]}}{scope}}}
  ]
}}"#
        );
        write(&p, &doc);
        p
    }

    fn smoke_config(dir: &Path, with_test: bool) -> ExperimentConfig {
        let (train_csv, test_csv) = write_dataset(dir, with_test);
        ExperimentConfig {
            name: "smoke".into(),
            train_csv,
            test_csv,
            schema: write_schema(dir),
            pipeline: write_pipeline(dir, "expert_fe", false),
            learner: LearnerKind::Linear,
            command: None,
            space: None,
            regime: Regime::Default,
            n_folds: 4,
            strategy: FoldStrategy::StratifiedTarget,
            seed: 11,
            leaderboard: None,
        }
    }

    #[test]
    fn smoke_run_completes_with_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_config(dir.path(), true);
        let lb_path = dir.path().join("lb.csv");
        write(&lb_path, "rank,score\n1,0.99\n2,0.8\n3,0.5\n");
        cfg.leaderboard = Some(LeaderboardRef {
            csv: lb_path,
            direction: Direction::HigherBetter,
        });
        let run_dir = dir.path().join("run");
        let res = run_experiment(&cfg, &run_dir, 1).unwrap();

        assert_eq!(res.fold_metrics.len(), 4);
        assert_eq!(res.metric, "auc");
        assert!(res.cv_mean > 0.8, "separable data, got {}", res.cv_mean);
        assert!(res.test_metric.is_some());
        let p = res.percentile.unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(res.trials.len(), 4);
        assert!(res.trials.iter().all(|t| t.len() == 1));

        for f in [
            "config.json",
            "folds.json",
            "pipeline.json",
            "metrics.json",
            ENSEMBLED_FILE,
            "fold_0_valid_pred.csv",
            "fold_3_test_pred.csv",
        ] {
            assert!(run_dir.join(f).exists(), "missing artifact {f}");
        }

        // the result file round-trips
        let back: RunResult = io::read_json(&run_dir.join("metrics.json")).unwrap();
        assert_eq!(back.cv_mean, res.cv_mean);
        assert_eq!(back.fold_metrics.len(), 4);
        assert_eq!(back.summary_line(), res.summary_line());
        assert!(back.summary_line().starts_with("smoke\texpert_fe\tlinear\tdefault\tauc="));
    }

    #[test]
    fn reruns_and_parallel_folds_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let space_path = dir.path().join("space.json");
        write(
            &space_path,
            r#"{"params": [{"name": "alpha", "dist": {"log_uniform": [1e-4, 100.0]}, "default": 1.0}]}"#,
        );
        let mut cfg = smoke_config(dir.path(), true);
        cfg.space = Some(space_path);
        cfg.regime = Regime::LightHpo;

        let d1 = dir.path().join("r1");
        let d2 = dir.path().join("r2");
        let d3 = dir.path().join("r3");
        run_experiment(&cfg, &d1, 1).unwrap();
        run_experiment(&cfg, &d2, 1).unwrap();
        run_experiment(&cfg, &d3, 4).unwrap();

        for f in ["metrics.json", ENSEMBLED_FILE, "fold_0_valid_pred.csv"] {
            let b1 = std::fs::read(d1.join(f)).unwrap();
            let b2 = std::fs::read(d2.join(f)).unwrap();
            let b3 = std::fs::read(d3.join(f)).unwrap();
            assert_eq!(b1, b2, "rerun changed {f}");
            assert_eq!(b1, b3, "jobs=4 changed {f}");
        }
        let res: RunResult = io::read_json(&d1.join("metrics.json")).unwrap();
        assert!(res.trials.iter().all(|t| t.len() == 20));
    }

    #[test]
    fn pooled_pipeline_without_test_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_config(dir.path(), false);
        cfg.pipeline = write_pipeline(dir.path(), "expert_fe_tta", true);
        let err = run_experiment(&cfg, &dir.path().join("run"), 1).unwrap_err();
        match err {
            Error::Stage { stage, source } => {
                assert_eq!(stage, "pipeline");
                assert!(matches!(*source, Error::ScopeDataMissing(_)), "{source}");
            }
            other => panic!("expected a stage-wrapped error, got {other}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_combinations() {
        let dir = tempfile::tempdir().unwrap();
        let base = smoke_config(dir.path(), false);

        let mut c = base.clone();
        c.name = "has space".into();
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = base.clone();
        c.n_folds = 1;
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = base.clone();
        c.regime = Regime::ExtensiveHpo; // no space configured
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        let mut c = base.clone();
        c.learner = LearnerKind::External; // no command
        assert!(matches!(c.validate(), Err(Error::Config(_))));

        assert!(base.validate().is_ok());
    }

    #[test]
    fn load_config_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(dir.path(), false);
        // rewrite with bare file names to exercise resolution
        let doc = serde_json::json!({
            "name": "rel",
            "train_csv": "train.csv",
            "schema": "schema.json",
            "pipeline": "pipeline.json",
            "learner": "linear",
            "regime": "default",
            "n_folds": 3,
            "strategy": "plain",
            "seed": 1
        });
        let p = dir.path().join("config.json");
        write(&p, &serde_json::to_string(&doc).unwrap());
        let loaded = load_config(&p).unwrap();
        assert_eq!(loaded.train_csv, cfg.train_csv);
        assert_eq!(loaded.schema, cfg.schema);
        assert!(preflight(&loaded).is_ok());
    }

    #[test]
    fn preflight_names_the_failing_piece() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = smoke_config(dir.path(), false);
        cfg.pipeline = write_pipeline(dir.path(), "expert_fe_tta", true);
        // pooled pipeline without test csv
        assert!(matches!(
            preflight(&cfg),
            Err(Error::ScopeDataMissing(_))
        ));

        let mut cfg = smoke_config(dir.path(), false);
        cfg.train_csv = dir.path().join("absent.csv");
        assert!(matches!(preflight(&cfg), Err(Error::Io { .. })));
    }

    #[test]
    fn external_learner_round_trips_through_the_bundle_protocol() {
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("stub.sh");
        write(
            &script,
            r#"#!/bin/sh
dir="$1"
n=$(($(wc -l < "$dir/valid.csv") - 1))
{ echo pred; i=0; while [ $i -lt $n ]; do echo 0.5; i=$((i+1)); done; } > "$dir/valid_pred.csv"
if [ -f "$dir/test.csv" ]; then
  m=$(($(wc -l < "$dir/test.csv") - 1))
  { echo pred; i=0; while [ $i -lt $m ]; do echo 0.5; i=$((i+1)); done; } > "$dir/test_pred.csv"
fi
"#,
        );
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();

        let mut cfg = smoke_config(dir.path(), true);
        cfg.learner = LearnerKind::External;
        cfg.command = Some(format!("sh {}", script.display()));
        let run_dir = dir.path().join("run");
        let res = run_experiment(&cfg, &run_dir, 1).unwrap();
        // constant predictions → every fold AUC is exactly 0.5
        assert!(res.fold_metrics.iter().all(|m| m.value == 0.5));
        assert!(run_dir.join("folds/fold_0/final/manifest.json").exists());
        assert!(run_dir.join(ENSEMBLED_FILE).exists());
    }

    #[test]
    fn leftover_categoricals_are_encoded_consistently() {
        let train = Table::new(vec![
            Column::categorical_from_texts("c", &[Some("a"), Some("b"), Some("c")]),
            Column::numeric("y", vec![0.0, 1.0, 0.0]).with_role(Role::Target),
        ])
        .unwrap();
        // test dictionary in a different first-appearance order + an unseen value
        let test = Table::new(vec![Column::categorical_from_texts(
            "c",
            &[Some("c"), Some("zz"), Some("a"), None],
        )])
        .unwrap();
        let (tr, te) = encode_remaining_categoricals(&train, Some(&test), 1).unwrap();
        let te = te.unwrap();
        let at = |t: &Table, r: usize| t.column("c").unwrap().num(r);
        assert_eq!(at(&tr, 0), Some(0.0));
        assert_eq!(at(&tr, 2), Some(2.0));
        assert_eq!(at(&te, 0), Some(2.0), "test 'c' must use the train code");
        assert_eq!(at(&te, 1), Some(-1.0), "unseen category becomes -1");
        assert_eq!(at(&te, 3), None, "missing stays missing");
    }

    #[test]
    fn matrix_index_is_unique_and_csv_is_sorted() {
        let r = |name: &str, pipeline: PipelineKind, pct: Option<f64>| RunResult {
            experiment: name.into(),
            pipeline,
            learner: LearnerKind::Linear,
            regime: Regime::Default,
            seed: 0,
            metric: "auc".into(),
            fold_metrics: vec![],
            cv_mean: 0.7,
            fold_metrics_raw: None,
            cv_mean_raw: None,
            ensembled_predictions: None,
            test_metric: None,
            test_metric_raw: None,
            percentile: pct,
            trials: vec![],
        };
        let mut m = ResultMatrix::default();
        m.insert(r("b", PipelineKind::Standardized, Some(0.5))).unwrap();
        m.insert(r("a", PipelineKind::Standardized, None)).unwrap();
        assert!(m
            .insert(r("a", PipelineKind::Standardized, None))
            .is_err());
        assert_eq!(m.len(), 2);

        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], MATRIX_CSV_HEADER);
        assert!(lines[1].starts_with("a,standardized,linear,default,0.7,"));
        assert!(lines[2].ends_with("0.5"));
        assert!(
            m.get("a", PipelineKind::Standardized, LearnerKind::Linear, Regime::Default)
                .is_some()
        );
    }

    #[test]
    fn config_digest_tracks_file_content() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config(dir.path(), false);
        let d1 = config_digest(&cfg).unwrap();
        assert_eq!(d1, config_digest(&cfg).unwrap());
        // touching a referenced file changes the digest
        let mut text = std::fs::read_to_string(&cfg.train_csv).unwrap();
        text.push_str("60,0.5,1.0,a,1\n");
        write(&cfg.train_csv, &text);
        assert_ne!(d1, config_digest(&cfg).unwrap());
    }
}
