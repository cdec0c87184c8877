//! Batch command-line front end: validate configs, run single experiments
//! or whole dataset × pipeline × learner × regime grids (resumable), audit
//! pipelines for leakage, aggregate reports, and bootstrap schema files.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 file-system error,
//! 4 runtime failure, 5 leakage detected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tabforge::error::Error;
use tabforge::experiment::{
    config_digest, load_config, preflight, run_audit, run_experiment, ExperimentConfig,
    LeaderboardRef, ResultMatrix, RunResult,
};
use tabforge::folds::FoldStrategy;
use tabforge::hpo::Regime;
use tabforge::io::{read_json, write_json, SchemaConfig};
use tabforge::learners::LearnerKind;
use tabforge::pipeline::PipelineSpec;
use tabforge::report::make_report;
use tabforge::table::{ColumnKind, Task};

/// Environment variable naming the directory new run dirs default into.
const RUN_ROOT_VAR: &str = "TABFORGE_RUN_ROOT";

#[derive(Parser)]
#[command(
    name = "tabforge",
    version,
    about = "Leakage-safe tabular feature engineering and evaluation engine"
)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check an experiment config and every document it references.
    Validate {
        /// Experiment config (JSON).
        config: PathBuf,
    },
    /// Run one experiment end to end and print its summary line.
    Run {
        /// Experiment config (JSON).
        config: PathBuf,
        /// Output directory (default: $TABFORGE_RUN_ROOT/<config stem>).
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Fold-level worker threads; never changes output bytes.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Replace an existing non-empty run directory.
        #[arg(long)]
        force: bool,
    },
    /// Run a dataset x pipeline x learner x regime grid, resumably.
    Matrix {
        /// Matrix config (JSON).
        config: PathBuf,
        /// Output directory (default: $TABFORGE_RUN_ROOT/<config stem>).
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Cell-level worker pool size; cells themselves run single-threaded.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Probe a config's pipeline for train/test or fold leakage.
    Audit {
        /// Experiment config (JSON).
        config: PathBuf,
        /// Perturbation probes per step.
        #[arg(long, default_value_t = 16)]
        probes: usize,
    },
    /// Aggregate finished runs into gain tables and rank agreement.
    Report {
        /// Run directories: single runs or matrix roots.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Where to write report.md / report.json (default: first run dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Guess a schema document from a CSV file and print it.
    InferSchema {
        csv: PathBuf,
        /// Column to declare as the prediction target.
        #[arg(long)]
        target: Option<String>,
        /// Column to declare as the row id.
        #[arg(long)]
        id: Option<String>,
        /// Write the schema here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let code = match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            classify(&e)
        }
    };
    std::process::exit(code);
}

/// Maps an error to the exit-code contract: 2 for configuration problems,
/// 3 for file-system problems, 4 for runtime failures. Wrappers are
/// classified by their root cause.
fn classify(e: &Error) -> i32 {
    match e {
        Error::Stage { source, .. } | Error::StepFailed { source, .. } => classify(source),
        Error::Config(_)
        | Error::Json(_)
        | Error::SchemaViolation { .. }
        | Error::IllegalScopeForKind { .. }
        | Error::UnknownOperator(_)
        | Error::ScopeDataMissing(_)
        | Error::ScopeDataUnexpected(_)
        | Error::MissingFolds
        | Error::UnknownMetric(_)
        | Error::EmptyMatrix
        | Error::MissingTarget(_)
        | Error::MissingDefault(_)
        | Error::EmptySpace
        | Error::InvalidBounds { .. }
        | Error::EmptyCategorical(_)
        | Error::UnknownHyperparameter(_)
        | Error::WrongTaskForStrategy { .. } => 2,
        Error::Io { .. } => 3,
        _ => 4,
    }
}

fn dispatch(cmd: Cmd) -> Result<i32, Error> {
    match cmd {
        Cmd::Validate { config } => {
            let cfg = with_doc(&config, load_config(&config))?;
            with_doc(&config, preflight(&cfg))?;
            println!("ok: {}", config.display());
            Ok(0)
        }
        Cmd::Run {
            config,
            run_dir,
            seed,
            jobs,
            force,
        } => cmd_run(&config, run_dir, seed, jobs, force),
        Cmd::Matrix {
            config,
            run_dir,
            seed,
            jobs,
        } => cmd_matrix(&config, run_dir, seed, jobs),
        Cmd::Audit { config, probes } => {
            let cfg = with_doc(&config, load_config(&config))?;
            let report = with_doc(&config, run_audit(&cfg, probes))?;
            print!("{}", report.render_text());
            Ok(if report.passed() { 0 } else { 5 })
        }
        Cmd::Report { runs, out } => cmd_report(&runs, out),
        Cmd::InferSchema {
            csv,
            target,
            id,
            out,
        } => cmd_infer_schema(&csv, target, id, out),
    }
}

/// Prefixes an error with the document that produced it, so diagnostics
/// always name a file.
fn with_doc<T>(doc: &Path, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        io @ Error::Io { .. } => io, // already names its path
        other => Error::Stage {
            stage: doc.display().to_string(),
            source: Box::new(other),
        },
    })
}

/// Picks the run directory: the flag, else `$TABFORGE_RUN_ROOT/<stem>`.
fn resolve_run_dir(flag: Option<PathBuf>, config: &Path) -> Result<PathBuf, Error> {
    if let Some(d) = flag {
        return Ok(d);
    }
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    match std::env::var_os(RUN_ROOT_VAR) {
        Some(root) => Ok(PathBuf::from(root).join(stem)),
        None => Err(Error::Config(format!(
            "no --run-dir given and {RUN_ROOT_VAR} is not set"
        ))),
    }
}

fn dir_is_nonempty(dir: &Path) -> Result<bool, Error> {
    if !dir.exists() {
        return Ok(false);
    }
    let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(entries.next().is_some())
}

fn cmd_run(
    config: &Path,
    run_dir: Option<PathBuf>,
    seed: Option<u64>,
    jobs: usize,
    force: bool,
) -> Result<i32, Error> {
    let mut cfg = with_doc(config, load_config(config))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let run_dir = resolve_run_dir(run_dir, config)?;
    if dir_is_nonempty(&run_dir)? {
        if !force {
            eprintln!(
                "refusing to write into non-empty {} (pass --force to replace it)",
                run_dir.display()
            );
            return Ok(4);
        }
        std::fs::remove_dir_all(&run_dir)
            .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
    }
    let result = run_experiment(&cfg, &run_dir, jobs)?;
    println!("{}", result.summary_line());
    Ok(0)
}

// ------------------------------------------------------------------ matrix

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixDataset {
    name: String,
    train_csv: PathBuf,
    #[serde(default)]
    test_csv: Option<PathBuf>,
    schema: PathBuf,
    #[serde(default)]
    leaderboard: Option<LeaderboardRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixLearner {
    learner: LearnerKind,
    #[serde(default)]
    space: Option<PathBuf>,
    #[serde(default)]
    command: Option<String>,
}

/// Grid description: the cross product of datasets, pipeline documents,
/// learners, and regimes, sharing one fold setup and master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixConfig {
    datasets: Vec<MatrixDataset>,
    pipelines: Vec<PathBuf>,
    learners: Vec<MatrixLearner>,
    regimes: Vec<Regime>,
    n_folds: usize,
    strategy: FoldStrategy,
    seed: u64,
}

impl MatrixConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut self.datasets {
            resolve(&mut d.train_csv);
            if let Some(p) = &mut d.test_csv {
                resolve(p);
            }
            resolve(&mut d.schema);
            if let Some(l) = &mut d.leaderboard {
                resolve(&mut l.csv);
            }
        }
        for p in &mut self.pipelines {
            resolve(p);
        }
        for l in &mut self.learners {
            if let Some(p) = &mut l.space {
                resolve(p);
            }
        }
    }
}

struct Cell {
    cfg: ExperimentConfig,
    dir: PathBuf,
    label: String,
}

fn expand_cells(mc: &MatrixConfig, run_dir: &Path) -> Result<Vec<Cell>, Error> {
    if mc.datasets.is_empty()
        || mc.pipelines.is_empty()
        || mc.learners.is_empty()
        || mc.regimes.is_empty()
    {
        return Err(Error::EmptyMatrix);
    }
    // Pipeline kind is part of each cell's identity; read it once per doc.
    let mut kinds = BTreeMap::new();
    for p in &mc.pipelines {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::io(p.display().to_string(), e))?;
        let spec = with_doc(p, PipelineSpec::parse_str(&text))?;
        kinds.insert(p.clone(), spec.kind);
    }
    let mut cells = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for d in &mc.datasets {
        for p in &mc.pipelines {
            let kind = kinds[p];
            for l in &mc.learners {
                for &regime in &mc.regimes {
                    let label =
                        format!("{}__{}__{}__{}", d.name, kind, l.learner, regime);
                    if !seen.insert(label.clone()) {
                        return Err(Error::Config(format!(
                            "duplicate grid cell {label}: two pipeline documents share kind {kind}"
                        )));
                    }
                    let cfg = ExperimentConfig {
                        name: d.name.clone(),
                        train_csv: d.train_csv.clone(),
                        test_csv: d.test_csv.clone(),
                        schema: d.schema.clone(),
                        pipeline: p.clone(),
                        learner: l.learner,
                        command: l.command.clone(),
                        space: l.space.clone(),
                        regime,
                        n_folds: mc.n_folds,
                        strategy: mc.strategy.clone(),
                        seed: mc.seed,
                        leaderboard: d.leaderboard.clone(),
                    };
                    cfg.validate()
                        .map_err(|e| e.at_stage(&format!("cell {label}")))?;
                    cells.push(Cell {
                        cfg,
                        dir: run_dir.join("cells").join(&label),
                        label,
                    });
                }
            }
        }
    }
    Ok(cells)
}

const CELL_DIGEST_FILE: &str = "cell_digest.txt";

/// Runs one grid cell, or reuses its previous result when the finished
/// marker matches the current content digest. Returns the result and
/// whether it was reused.
fn run_cell(cell: &Cell) -> Result<(RunResult, bool), Error> {
    let digest = config_digest(&cell.cfg)?;
    let marker = cell.dir.join(CELL_DIGEST_FILE);
    let metrics = cell.dir.join("metrics.json");
    if marker.exists() && metrics.exists() {
        let recorded = std::fs::read_to_string(&marker)
            .map_err(|e| Error::io(marker.display().to_string(), e))?;
        if recorded.trim() == digest {
            return Ok((read_json(&metrics)?, true));
        }
    }
    // Stale partial output or a changed config: start the cell over.
    if cell.dir.exists() {
        std::fs::remove_dir_all(&cell.dir)
            .map_err(|e| Error::io(cell.dir.display().to_string(), e))?;
    }
    let result = run_experiment(&cell.cfg, &cell.dir, 1)?;
    std::fs::write(&marker, format!("{digest}\n"))
        .map_err(|e| Error::io(marker.display().to_string(), e))?;
    Ok((result, false))
}

fn cmd_matrix(
    config: &Path,
    run_dir: Option<PathBuf>,
    seed: Option<u64>,
    jobs: usize,
) -> Result<i32, Error> {
    let mut mc: MatrixConfig = with_doc(config, read_json(config))?;
    if let Some(base) = config.parent() {
        mc.resolve_paths(base);
    }
    if let Some(s) = seed {
        mc.seed = s;
    }
    let run_dir = resolve_run_dir(run_dir, config)?;
    let cells = with_doc(config, expand_cells(&mc, &run_dir))?;
    std::fs::create_dir_all(&run_dir)
        .map_err(|e| Error::io(run_dir.display().to_string(), e))?;

    // Cells fan out over the worker pool; each cell itself runs
    // single-threaded so the pool is the only source of parallelism.
    let outcomes: Vec<Result<(RunResult, bool), Error>> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {jobs}-thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    } else {
        cells.iter().map(run_cell).collect()
    };

    let mut matrix = ResultMatrix::default();
    let mut failed: Vec<(String, Error)> = Vec::new();
    let mut reused = 0usize;
    for (cell, outcome) in cells.iter().zip(outcomes) {
        match outcome {
            Ok((result, was_reused)) => {
                println!("{}", result.summary_line());
                reused += usize::from(was_reused);
                matrix
                    .insert(result)
                    .expect("cell labels were checked for uniqueness");
            }
            Err(e) => failed.push((cell.label.clone(), e)),
        }
    }
    if reused > 0 {
        eprintln!("reused {reused} finished cell(s)");
    }

    if !matrix.is_empty() {
        std::fs::write(run_dir.join("matrix.csv"), matrix.to_csv())
            .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
        let report = make_report(&matrix)?;
        std::fs::write(run_dir.join("report.md"), report.render_text())
            .map_err(|e| Error::io(run_dir.display().to_string(), e))?;
        write_json(&run_dir.join("report.json"), &report)?;
    }
    if failed.is_empty() {
        Ok(0)
    } else {
        eprintln!("{} of {} cells failed:", failed.len(), cells.len());
        for (label, e) in &failed {
            eprintln!("  {label}: {e}");
        }
        Ok(4)
    }
}

// ------------------------------------------------------------------ report

fn collect_metrics_files(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), Error> {
    let direct = dir.join("metrics.json");
    if direct.is_file() {
        found.push(direct);
        return Ok(());
    }
    let cells = dir.join("cells");
    if cells.is_dir() {
        let entries =
            std::fs::read_dir(&cells).map_err(|e| Error::io(cells.display().to_string(), e))?;
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for d in dirs {
            let m = d.join("metrics.json");
            if m.is_file() {
                found.push(m);
            }
        }
        return Ok(());
    }
    Err(Error::Config(format!(
        "{} holds neither metrics.json nor a cells/ directory",
        dir.display()
    )))
}

fn cmd_report(runs: &[PathBuf], out: Option<PathBuf>) -> Result<i32, Error> {
    let mut files = Vec::new();
    for dir in runs {
        collect_metrics_files(dir, &mut files)?;
    }
    let mut matrix = ResultMatrix::default();
    for f in &files {
        matrix.insert(read_json(f)?).map_err(|e| {
            Error::Stage {
                stage: f.display().to_string(),
                source: Box::new(e),
            }
        })?;
    }
    let report = make_report(&matrix)?;
    let out_dir = out.unwrap_or_else(|| runs[0].clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    std::fs::write(out_dir.join("report.md"), report.render_text())
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    write_json(&out_dir.join("report.json"), &report)?;
    std::fs::write(out_dir.join("matrix.csv"), matrix.to_csv())
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    print!("{}", report.render_text());
    Ok(0)
}

// ------------------------------------------------------------- infer-schema

fn is_missing(token: &str) -> bool {
    token.is_empty() || token == "NA" || token == "NaN"
}

fn cmd_infer_schema(
    csv_path: &Path,
    target: Option<String>,
    id: Option<String>,
    out: Option<PathBuf>,
) -> Result<i32, Error> {
    let p = csv_path.display().to_string();
    let file = std::fs::File::open(csv_path).map_err(|e| Error::io(&p, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::io(&p, std::io::Error::other(e)))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut numeric = vec![true; headers.len()];
    let mut target_values: Vec<String> = Vec::new();
    let target_idx = target
        .as_deref()
        .map(|t| {
            headers
                .iter()
                .position(|h| h == t)
                .ok_or_else(|| Error::MissingTarget(t.to_string()))
        })
        .transpose()?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::io(&p, std::io::Error::other(e)))?;
        for (i, cell) in rec.iter().enumerate() {
            if !is_missing(cell) && cell.parse::<f64>().is_err() {
                numeric[i] = false;
            }
            if Some(i) == target_idx && !is_missing(cell) {
                target_values.push(cell.to_string());
            }
        }
    }

    let id = id.or_else(|| headers.iter().find(|h| h.as_str() == "id").cloned());
    let task = match target_idx {
        None => None,
        Some(i) => Some(infer_task(&target_values, numeric[i])?),
    };
    let mut schema = SchemaConfig {
        target,
        id: id.clone(),
        task,
        metric: task.map(|t| default_metric_name(t).to_string()),
        ..SchemaConfig::default()
    };
    for (i, h) in headers.iter().enumerate() {
        let special = Some(h) == schema.target.as_ref() || Some(h) == id.as_ref();
        if !numeric[i] && !special {
            schema.kinds.insert(h.clone(), ColumnKind::Categorical);
        }
    }
    schema.validate()?;

    let mut text = serde_json::to_string_pretty(&schema)?;
    text.push('\n');
    match out {
        Some(path) => {
            std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn default_metric_name(task: Task) -> &'static str {
    match task {
        Task::Binary => "auc",
        Task::Multiclass(_) => "logloss",
        Task::Regression => "rmse",
    }
}

/// Task guess from observed target values: two distinct levels mean binary;
/// a small contiguous 0..k integer range means k-class classification; any
/// other numeric target means regression; any other text target means
/// k-class classification.
fn infer_task(values: &[String], numeric: bool) -> Result<Task, Error> {
    if values.is_empty() {
        return Err(Error::Config(
            "target column has no non-missing values".into(),
        ));
    }
    let mut distinct: Vec<&String> = values.iter().collect();
    distinct.sort();
    distinct.dedup();
    let k = distinct.len();
    if k < 2 {
        return Err(Error::Config(
            "target column has a single distinct value".into(),
        ));
    }
    if k == 2 {
        return Ok(Task::Binary);
    }
    if !numeric {
        return Ok(Task::Multiclass(k));
    }
    let ints: Option<Vec<i64>> = distinct
        .iter()
        .map(|s| {
            let v: f64 = s.parse().ok()?;
            (v.fract() == 0.0 && (0.0..=63.0).contains(&v)).then_some(v as i64)
        })
        .collect();
    match ints {
        Some(mut vals) => {
            vals.sort_unstable();
            let contiguous = vals.first() == Some(&0)
                && vals.last() == Some(&(k as i64 - 1));
            if contiguous {
                Ok(Task::Multiclass(k))
            } else {
                Ok(Task::Regression)
            }
        }
        None => Ok(Task::Regression),
    }
}
