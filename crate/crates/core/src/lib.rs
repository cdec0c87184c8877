//! Leakage-safe tabular feature engineering and evaluation.
//!
//! The crate provides a columnar table model, a catalog of fit/transform
//! feature-engineering operators with explicit fit scopes, declarative
//! preprocessing pipelines with an empirical leakage auditor,
//! cross-validation folds, built-in linear and gradient-boosted learners
//! plus an external-process adapter, hyperparameter search (random + TPE),
//! and an experiment runner that ensembles per-fold models and scores the
//! result against a reference leaderboard.
//!
//! Everything is deterministic: given the same config, input files, and
//! seed, every artifact is byte-identical, regardless of parallelism.

pub mod error;
pub mod experiment;
pub mod folds;
pub mod hpo;
pub mod io;
pub mod learners;
pub mod metrics;
pub mod ops;
pub mod pipeline;
pub mod report;
pub mod table;
pub mod util;

pub use error::{Error, Result};
