//! Declarative preprocessing pipelines: parsing, ordered fit/transform with
//! scope enforcement, replay, and an empirical leakage audit.
//!
//! A pipeline is an ordered list of operator steps, each with a declared fit
//! scope. Fitting walks the steps in order: each step estimates its state
//! from the rows its scope permits, then transforms the train table (and the
//! test table, when present) before the next step fits. The fitted result
//! replays deterministically on any table whose schema matches the fit-time
//! input.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::folds::FoldAssignment;
use crate::io::format_f64;
use crate::ops::{FitCtx, FitScope, OpSpec, OpState, Split};
use crate::table::{Column, ColumnKind, Role, Table, MISSING_CODE};
use crate::util::{fnv1a64, splitmix64};

/// The three pipeline families. The plain feature-engineering kind may only
/// read training rows; the test-time-adaptation kind may additionally pool
/// test feature rows into declared steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Standardized,
    ExpertFe,
    ExpertFeTta,
}

impl std::fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PipelineKind::Standardized => write!(f, "standardized"),
            PipelineKind::ExpertFe => write!(f, "expert_fe"),
            PipelineKind::ExpertFeTta => write!(f, "expert_fe_tta"),
        }
    }
}

/// One validated pipeline step.
#[derive(Debug, Clone)]
pub struct PipelineStep {
    pub op: OpSpec,
    pub scope: FitScope,
}

/// A validated pipeline specification.
#[derive(Debug, Clone)]
pub struct PipelineSpec {
    pub kind: PipelineKind,
    pub steps: Vec<PipelineStep>,
    /// Free-text provenance (e.g. which published solution a preset mirrors).
    pub note: Option<String>,
}

/// Raw serde shape of the spec document; converted into [`PipelineSpec`]
/// with per-step validation so errors carry a JSON path.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: PipelineKind,
    #[serde(default)]
    note: Option<String>,
    steps: Vec<RawStep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    op: String,
    #[serde(default)]
    params: serde_json::Value,
    #[serde(default)]
    scope: FitScope,
}

impl PipelineSpec {
    /// Parses and validates a pipeline spec document (JSON text).
    pub fn parse_str(text: &str) -> Result<PipelineSpec> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::SchemaViolation {
                path: "$".into(),
                msg: e.to_string(),
            })?;
        Self::from_json(raw)
    }

    /// Parses and validates a pipeline spec from a JSON value.
    pub fn from_json(value: serde_json::Value) -> Result<PipelineSpec> {
        let raw: RawSpec = serde_json::from_value(value).map_err(|e| Error::SchemaViolation {
            path: "$".into(),
            msg: e.to_string(),
        })?;
        let mut steps = Vec::with_capacity(raw.steps.len());
        for (i, rs) in raw.steps.into_iter().enumerate() {
            let op = OpSpec::parse(&rs.op, rs.params).map_err(|e| match e {
                Error::SchemaViolation { path, msg } => Error::SchemaViolation {
                    path: format!("steps[{i}].{path}"),
                    msg,
                },
                Error::UnknownOperator(n) => Error::UnknownOperator(n),
                other => Error::SchemaViolation {
                    path: format!("steps[{i}]"),
                    msg: other.to_string(),
                },
            })?;
            if rs.scope == FitScope::TrainPlusTest && raw.kind != PipelineKind::ExpertFeTta {
                return Err(Error::IllegalScopeForKind {
                    step: i,
                    op: op.name().to_string(),
                    kind: raw.kind.to_string(),
                });
            }
            if raw.kind == PipelineKind::Standardized && !op.standardized_ok() {
                return Err(Error::SchemaViolation {
                    path: format!("steps[{i}].op"),
                    msg: format!(
                        "{} is not part of the standardized pipeline's fixed step set",
                        op.name()
                    ),
                });
            }
            steps.push(PipelineStep {
                op,
                scope: rs.scope,
            });
        }
        Ok(PipelineSpec {
            kind: raw.kind,
            steps,
            note: raw.note,
        })
    }

    /// Echoes the validated spec back out as a JSON document.
    pub fn to_json(&self) -> serde_json::Value {
        let steps: Vec<serde_json::Value> = self
            .steps
            .iter()
            .map(|s| {
                serde_json::json!({
                    "op": s.op.name(),
                    "params": s.op.params_json(),
                    "scope": s.scope,
                })
            })
            .collect();
        let mut doc = serde_json::json!({ "kind": self.kind, "steps": steps });
        if let Some(note) = &self.note {
            doc["note"] = serde_json::Value::String(note.clone());
        }
        doc
    }

    /// True when any step pools test rows, i.e. test features are required.
    pub fn needs_test(&self) -> bool {
        self.steps.iter().any(|s| s.scope == FitScope::TrainPlusTest)
    }

    /// True when any step needs a fold assignment to fit.
    pub fn needs_folds(&self) -> bool {
        self.steps.iter().any(|s| s.op.is_fold_aware())
    }
}

/// Ordered `(name, kind)` schema fingerprint. Dictionaries are deliberately
/// excluded: test sets legitimately carry categories the train set lacks.
pub fn schema_fingerprint(t: &Table) -> String {
    let mut buf = String::new();
    for c in t.columns() {
        buf.push_str(&c.name);
        buf.push('\u{1f}');
        buf.push_str(match c.kind() {
            ColumnKind::Numeric => "n",
            ColumnKind::Categorical => "c",
        });
        buf.push('\u{1e}');
    }
    format!("{:016x}", fnv1a64(buf.as_bytes()))
}

/// Order-sensitive digest of the entire table: schema, roles, target spec,
/// and every cell. Bit-identical tables (and only those) collide.
pub fn table_digest(t: &Table) -> u64 {
    let mut buf = String::new();
    buf.push_str(&format!("{:?}", t.target_spec));
    for c in t.columns() {
        buf.push_str(&format!("|{}\u{1f}{:?}\u{1f}{:?}:", c.name, c.role, c.kind()));
        for r in 0..t.n_rows() {
            match c.kind() {
                ColumnKind::Numeric => match c.num(r) {
                    Some(v) => buf.push_str(&format_f64(v)),
                    None => buf.push('\u{b7}'),
                },
                ColumnKind::Categorical => buf.push_str(c.text(r).unwrap_or("\u{b7}")),
            }
            buf.push('\u{1e}');
        }
    }
    fnv1a64(buf.as_bytes())
}

/// One fitted pipeline step: the operator name, its declared scope, and the
/// serializable state that replays its transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedStep {
    pub op: String,
    pub scope: FitScope,
    pub state: OpState,
}

/// A fitted pipeline: replayable states plus the schema fingerprints that
/// guard replay against mismatched inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub kind: PipelineKind,
    #[serde(default)]
    pub note: Option<String>,
    pub steps: Vec<FittedStep>,
    pub seed: u64,
    /// Fingerprint of the training table the pipeline was fitted on.
    pub train_input_fingerprint: String,
    /// Fingerprint a test-side table must match (the fit-time test features,
    /// or the train schema minus target/id columns when no test was given).
    pub test_input_fingerprint: String,
    /// Fingerprint of the transformed training table.
    pub train_output_fingerprint: String,
}

/// Everything `fit_pipeline` produces: the replayable pipeline plus the
/// already-transformed train (and test) tables.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub pipeline: FittedPipeline,
    pub train: Table,
    pub test: Option<Table>,
}

/// Per-step RNG seed: mixes the master seed with the step index so inserting
/// a step upstream cannot silently reuse a downstream step's randomness.
fn step_seed(seed: u64, step: usize) -> u64 {
    splitmix64(seed ^ (step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// What a test-shaped input must look like when no test table was present at
/// fit time: the train schema minus target and id columns.
fn test_shaped(train: &Table) -> Table {
    let keep: Vec<&str> = train
        .columns()
        .iter()
        .filter(|c| c.role == Role::Feature)
        .map(|c| c.name.as_str())
        .collect();
    train.select_columns(&keep).expect("feature subset")
}

/// Fits every step in order on its declared scope, transforming train and
/// test before the next step fits.
///
/// `test` must be present exactly when a step declares the pooled scope;
/// `folds` must be present exactly when a step is fold-aware.
pub fn fit_pipeline(
    spec: &PipelineSpec,
    train: &Table,
    test: Option<&Table>,
    folds: Option<&FoldAssignment>,
    seed: u64,
) -> Result<FitOutput> {
    if spec.needs_test() && test.is_none() {
        return Err(Error::ScopeDataMissing(
            "a step pools test rows but no test features were provided".into(),
        ));
    }
    // Test features without pooling steps are legal: the pipeline still
    // transforms them for later prediction. Likewise an unused fold
    // assignment; only the missing direction is an error.
    if spec.needs_folds() && folds.is_none() {
        return Err(Error::ScopeDataMissing(
            "a fold-aware step needs a fold assignment".into(),
        ));
    }

    let train_input_fingerprint = schema_fingerprint(train);
    let test_input_fingerprint = match test {
        Some(t) => schema_fingerprint(t),
        None => schema_fingerprint(&test_shaped(train)),
    };

    let mut cur_train = train.clone();
    let mut cur_test = test.cloned();
    let mut steps = Vec::with_capacity(spec.steps.len());

    for (i, step) in spec.steps.iter().enumerate() {
        let at = |e: Error| e.at_step(i, step.op.name());
        let ctx = FitCtx {
            train: &cur_train,
            test: cur_test.as_ref(),
            scope: step.scope,
            folds,
            seed: step_seed(seed, i),
            prefix: format!("s{i}."),
        };
        let state = step.op.fit(&ctx).map_err(at)?;
        cur_train = state.transform(&cur_train, Split::Train).map_err(at)?;
        if let Some(t) = cur_test.take() {
            cur_test = Some(state.transform(&t, Split::Test).map_err(at)?);
        }
        steps.push(FittedStep {
            op: step.op.name().to_string(),
            scope: step.scope,
            state,
        });
    }

    let pipeline = FittedPipeline {
        kind: spec.kind,
        note: spec.note.clone(),
        steps,
        seed,
        train_input_fingerprint,
        test_input_fingerprint,
        train_output_fingerprint: schema_fingerprint(&cur_train),
    };
    Ok(FitOutput {
        pipeline,
        train: cur_train,
        test: cur_test,
    })
}

impl FittedPipeline {
    /// Replays the fitted states over `t`. The schema fingerprint decides
    /// whether `t` is train-shaped (target present → fold-based semantics)
    /// or test-shaped; anything else is a mismatch.
    pub fn apply(&self, t: &Table) -> Result<Table> {
        let fp = schema_fingerprint(t);
        let split = if fp == self.train_input_fingerprint {
            Split::Train
        } else if fp == self.test_input_fingerprint {
            Split::Test
        } else {
            return Err(Error::SchemaMismatch(format!(
                "input fingerprint {fp} matches neither the fitted train nor test schema"
            )));
        };
        self.replay(t, split)
    }

    fn replay(&self, t: &Table, split: Split) -> Result<Table> {
        let mut cur = t.clone();
        for (i, step) in self.steps.iter().enumerate() {
            cur = step
                .state
                .transform(&cur, split)
                .map_err(|e| e.at_step(i, &step.op))?;
        }
        Ok(cur)
    }
}

// --------------------------------------------------------------- audit

/// Outcome of probing one step for leakage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepAudit {
    pub step: usize,
    pub op: String,
    pub scope: FitScope,
    /// Which invariant was probed: `scope_isolation` for plain steps,
    /// `oof_independence` for fold-aware ones.
    pub probe_kind: String,
    pub probes: usize,
    pub passed: bool,
    /// Human-readable description of the first violating perturbation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_violation: Option<String>,
}

/// Report-only result of [`audit_leakage`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub kind: PipelineKind,
    pub n_probes: usize,
    pub steps: Vec<StepAudit>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.steps.iter().all(|s| s.passed)
    }

    /// Plain-text rendering, one line per step.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "leakage audit: kind={} probes={}\n",
            self.kind, self.n_probes
        ));
        for s in &self.steps {
            out.push_str(&format!(
                "  step {:>2} {:<28} {:<16} {:<16} {}\n",
                s.step,
                s.op,
                format!("{:?}", s.scope),
                s.probe_kind,
                if s.passed { "pass" } else { "FAIL" }
            ));
            if let Some(v) = &s.first_violation {
                out.push_str(&format!("          first violation: {v}\n"));
            }
        }
        out.push_str(if self.passed() {
            "result: PASS\n"
        } else {
            "result: FAIL\n"
        });
        out
    }
}

/// Replaces one random cell of `t` with a different value (numeric cells get
/// a fresh finite draw, categorical cells a different code or missing).
fn perturb_table(t: &Table, rng: &mut ChaCha8Rng) -> Table {
    if t.n_rows() == 0 || t.n_cols() == 0 {
        return t.clone();
    }
    let col_idx = rng.random_range(0..t.n_cols());
    let row = rng.random_range(0..t.n_rows());
    let col = &t.columns()[col_idx];
    let new_col = match col.kind() {
        ColumnKind::Numeric => {
            let (values, missing) = col.numeric_data().expect("numeric");
            let mut values = values.to_vec();
            let mut missing = missing.to_vec();
            let mut v = rng.random_range(-1.0e6..1.0e6);
            if v == values[row] {
                v += 1.0;
            }
            values[row] = v;
            missing[row] = false;
            Column::numeric_masked(col.name.clone(), values, missing).expect("same length")
        }
        ColumnKind::Categorical => {
            let (dict, codes) = col.categorical_data().expect("categorical");
            let mut codes = codes.to_vec();
            let old = codes[row];
            codes[row] = if dict.is_empty() {
                MISSING_CODE
            } else {
                // rotate to a guaranteed-different code, missing included
                let options = dict.len() as u32 + 1; // codes 0..len plus missing
                let cur = if old == MISSING_CODE { dict.len() as u32 } else { old };
                let next = (cur + 1 + rng.random_range(0..options - 1)) % options;
                if next == dict.len() as u32 {
                    MISSING_CODE
                } else {
                    next
                }
            };
            Column::categorical(col.name.clone(), dict.clone(), codes).expect("codes in range")
        }
    };
    t.replace_column(new_col).expect("column exists")
}

/// Flips the target value of one train row: binary labels toggle 0 ↔ 1, any
/// other task shifts the value by +1 (still a legal target).
fn flip_target(t: &Table, row: usize) -> Table {
    let y = t.target_column().expect("train table has a target");
    let (values, missing) = y.numeric_data().expect("numeric target");
    let mut values = values.to_vec();
    let old = values[row];
    let is_binary = matches!(
        t.target_spec.map(|s| s.task),
        Some(crate::table::Task::Binary)
    );
    values[row] = if is_binary { 1.0 - old } else { old + 1.0 };
    let col = Column::numeric_masked(y.name.clone(), values, missing.to_vec()).expect("len");
    t.replace_column(col).expect("target exists")
}

/// Perturbs one value of a named numeric column (the modeled output of an
/// out-of-fold model step).
fn bump_column(t: &Table, name: &str, row: usize) -> Table {
    let c = t.column(name).expect("audited column exists");
    let (values, missing) = c.numeric_data().expect("numeric");
    let mut values = values.to_vec();
    values[row] = if missing[row] { 1.0 } else { values[row] + 100.0 };
    let mut missing = missing.to_vec();
    missing[row] = false;
    let col = Column::numeric_masked(name.to_string(), values, missing).expect("len");
    t.replace_column(col).expect("column exists")
}

/// Cells of row `row` across every non-target column, as comparable text.
fn row_snapshot(t: &Table, row: usize) -> Vec<String> {
    t.columns()
        .iter()
        .filter(|c| c.role != Role::Target)
        .map(|c| match c.kind() {
            ColumnKind::Numeric => c.num(row).map_or("\u{b7}".into(), format_f64),
            ColumnKind::Categorical => c.text(row).unwrap_or("\u{b7}").to_string(),
        })
        .collect()
}

/// Empirically verifies the leakage contract of every step: plain steps must
/// be bit-insensitive to test-row perturbations; fold-aware steps must leave
/// a row's own engineered values untouched when that row's learning signal
/// (target, or modeled output column) is flipped.
///
/// Report-only: a failing step is recorded, never raised as an error.
pub fn audit_leakage(
    spec: &PipelineSpec,
    train: &Table,
    test: Option<&Table>,
    folds: Option<&FoldAssignment>,
    seed: u64,
    n_probes: usize,
) -> Result<AuditReport> {
    // Reference fit; also yields each step's input tables.
    let mut cur_train = train.clone();
    let mut cur_test = test.cloned();
    let mut audits = Vec::with_capacity(spec.steps.len());

    for (i, step) in spec.steps.iter().enumerate() {
        let at = |e: Error| e.at_step(i, step.op.name());
        let fit_once = |tr: &Table, te: Option<&Table>| -> Result<(OpState, Table)> {
            let ctx = FitCtx {
                train: tr,
                test: te,
                scope: step.scope,
                folds,
                seed: step_seed(seed, i),
                prefix: format!("s{i}."),
            };
            let state = step.op.fit(&ctx)?;
            let out = state.transform(tr, Split::Train)?;
            Ok((state, out))
        };

        let (ref_state, ref_train_out) = fit_once(&cur_train, cur_test.as_ref()).map_err(at)?;
        let ref_state_json = serde_json::to_string(&ref_state).expect("state serializes");
        let ref_digest = table_digest(&ref_train_out);

        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (0xa0d1_7000 + i as u64)));
        let mut passed = true;
        let mut first_violation = None;
        let mut probes = 0usize;

        if step.op.is_fold_aware() {
            // Out-of-fold independence: flip row r's learning signal, refit,
            // and demand row r's own engineered values stay identical.
            let flips: Vec<usize> = if train.n_rows() <= n_probes {
                (0..train.n_rows()).collect()
            } else {
                (0..n_probes)
                    .map(|_| rng.random_range(0..train.n_rows()))
                    .collect()
            };
            for r in flips {
                probes += 1;
                let flipped = match &step.op {
                    OpSpec::OofModelFeature(p) => bump_column(&cur_train, &p.output_col, r),
                    _ => flip_target(&cur_train, r),
                };
                let (_, out) = fit_once(&flipped, cur_test.as_ref()).map_err(at)?;
                if row_snapshot(&ref_train_out, r) != row_snapshot(&out, r) {
                    passed = false;
                    first_violation = Some(format!(
                        "flipping row {r}'s learning signal changed its own engineered values"
                    ));
                    break;
                }
            }
        } else if let Some(te) = cur_test.as_ref() {
            // Scope isolation: perturb test rows; fitted state and the
            // transformed train table must stay bit-identical. Pooling steps
            // legitimately read test rows, so only plain steps are probed.
            if step.scope == FitScope::TrainOnly {
                for p in 0..n_probes {
                    probes += 1;
                    let mutated = perturb_table(te, &mut rng);
                    let (state, out) = fit_once(&cur_train, Some(&mutated)).map_err(at)?;
                    let state_json = serde_json::to_string(&state).expect("state serializes");
                    if state_json != ref_state_json || table_digest(&out) != ref_digest {
                        passed = false;
                        first_violation = Some(format!(
                            "test perturbation {p} changed the fitted state or train output"
                        ));
                        break;
                    }
                }
            }
        }

        audits.push(StepAudit {
            step: i,
            op: step.op.name().to_string(),
            scope: step.scope,
            probe_kind: if step.op.is_fold_aware() {
                "oof_independence".into()
            } else {
                "scope_isolation".into()
            },
            probes,
            passed,
            first_violation,
        });

        cur_train = ref_train_out;
        if let Some(t) = cur_test.take() {
            cur_test = Some(ref_state.transform(&t, Split::Test).map_err(at)?);
        }
    }

    Ok(AuditReport {
        kind: spec.kind,
        n_probes,
        steps: audits,
    })
}
