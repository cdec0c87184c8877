//! Error types shared across the engine.

use thiserror::Error;

/// Unified error type for all engine operations.
#[derive(Debug, Error)]
pub enum Error {
    // --- table ---
    #[error("unknown column: {0}")]
    UnknownColumn(String),
    #[error("duplicate selection of column: {0}")]
    DuplicateSelection(String),
    #[error("duplicate column: {0}")]
    DuplicateColumn(String),
    #[error("row count mismatch: expected {expected}, got {got}")]
    RowCountMismatch { expected: usize, got: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("column {0} has the wrong kind for this operation")]
    KindMismatch(String),
    #[error("table may hold at most one target column")]
    MultipleTargets,

    // --- ingest ---
    #[error("csv parse error at row {row}, column {col}: {msg}")]
    ParseError { row: usize, col: String, msg: String },
    #[error("target column {0} not found in file")]
    MissingTarget(String),
    #[error("ragged row {row}: expected {expected} fields, got {got}")]
    RaggedRow { row: usize, expected: usize, got: usize },
    #[error("leaderboard file has no 'score' column")]
    MissingScoreColumn,
    #[error("leaderboard contains a non-finite score at row {0}")]
    NonFiniteScore(usize),

    // --- operators ---
    #[error("column {0} has no non-missing values to fit on")]
    AllMissingColumn(String),
    #[error("target transform domain violation: {0}")]
    NegativeBeyondDomain(String),
    #[error("cardinality {got} of column {col} exceeds the configured maximum {max}")]
    CardinalityExceeded { col: String, got: usize, max: usize },
    #[error("interaction order must be at least 2, got {0}")]
    OrderTooSmall(usize),
    #[error("column {0} is degenerate (fewer than 2 distinct values)")]
    DegenerateColumn(String),
    #[error("column {0} has zero variance")]
    ZeroVariance(String),
    #[error("operation requires a {expected} task, got {got}")]
    WrongTask { expected: String, got: String },
    #[error("column {0} is not binary 0/1")]
    NonBinary(String),
    #[error("missing values in columns {0:?}; impute before this operator")]
    MissingValues(Vec<String>),
    #[error("n_components {requested} too large (limit {limit})")]
    TooManyComponents { requested: usize, limit: usize },
    #[error("k={k} exceeds the {distinct} distinct rows in scope")]
    KTooLarge { k: usize, distinct: usize },
    #[error("operator requires a fold assignment over all train rows")]
    MissingFolds,
    #[error("column {0} has an empty dictionary")]
    EmptyDictionary(String),

    // --- pipeline ---
    #[error("pipeline spec violation at {path}: {msg}")]
    SchemaViolation { path: String, msg: String },
    #[error("step {step} ({op}): scope train_plus_test is illegal for pipeline kind {kind}")]
    IllegalScopeForKind { step: usize, op: String, kind: String },
    #[error("unknown operator: {0}")]
    UnknownOperator(String),
    #[error("{0}")]
    ScopeDataMissing(String),
    #[error("{0}")]
    ScopeDataUnexpected(String),
    #[error("table schema does not match the fitted pipeline input ({0})")]
    SchemaMismatch(String),
    #[error("step {step} ({op}): {source}")]
    StepFailed {
        step: usize,
        op: String,
        #[source]
        source: Box<Error>,
    },

    // --- folds / learners ---
    #[error("{rows} rows are too few for {folds} folds")]
    TooFewRows { rows: usize, folds: usize },
    #[error("{groups} groups are too few for {folds} folds")]
    TooFewGroups { groups: usize, folds: usize },
    #[error("strategy {strategy} requires a {expected} task")]
    WrongTaskForStrategy { strategy: String, expected: String },
    #[error("non-finite value in learner input")]
    NonFiniteInput,
    #[error("early stopping requires a validation set")]
    EmptyValidation,
    #[error("prediction input has {got} features, model expects {expected}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("external learner failed with exit code {code:?}: {stderr}")]
    ExternalFailed { code: Option<i32>, stderr: String },
    #[error("malformed external prediction: {0}")]
    MalformedPrediction(String),
    #[error("unknown hyperparameter {0} for this learner")]
    UnknownHyperparameter(String),

    // --- hpo ---
    #[error("invalid bounds for {name}: [{low}, {high}]")]
    InvalidBounds { name: String, low: f64, high: f64 },
    #[error("categorical parameter {0} has no values")]
    EmptyCategorical(String),
    #[error("search space has no parameters")]
    EmptySpace,
    #[error("all trials failed")]
    AllTrialsFailed,
    #[error("parameter {0} has no default value; the default regime requires one")]
    MissingDefault(String),

    // --- metrics / eval ---
    #[error("metric {0} is undefined when only one class is present")]
    SingleClass(String),
    #[error("non-finite value in metric input")]
    NonFinite,
    #[error("prediction shape mismatch across folds")]
    ShapeMismatch,
    #[error("rank correlation undefined for a constant vector")]
    DegenerateConstantVector,
    #[error("result matrix is empty")]
    EmptyMatrix,
    #[error("unknown metric: {0}")]
    UnknownMetric(String),

    // --- experiment / cli ---
    #[error("config error: {0}")]
    Config(String),
    #[error("run stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the pipeline step that raised it.
    pub fn at_step(self, step: usize, op: &str) -> Self {
        Error::StepFailed {
            step,
            op: op.to_string(),
            source: Box::new(self),
        }
    }

    /// Wrap an error with the experiment stage that raised it.
    pub fn at_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
