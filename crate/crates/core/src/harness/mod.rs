//! Metrics, dataset assembly and the within-corpus and cross-family
//! experiment drivers.

pub mod experiment;
pub mod metrics;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::interpret::InterpretError;
use crate::trainer::TrainError;

pub use experiment::{
    build_dataset, evaluate_pairs, run_cross_family_experiment, run_experiment, run_within_experiment, vocab_overlap,
    write_metrics_csv, write_verdicts_csv, CrossFamilyResult, DatasetStats, ExperimentConfig, ExperimentReport, Mode,
    MutantConfig, PositiveClass, Timings, VerdictRow,
};
pub use metrics::{compute_metrics, majority_baseline, metrics_by_family, Metrics};

/// Reference inference time per pair on a GPU, printed for comparison.
pub const REFERENCE_INFERENCE_MS: f64 = 6.5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no predictions to score")]
    EmptyInput,
    #[error("{predicted} predictions for {gold} gold labels")]
    LengthMismatch { predicted: usize, gold: usize },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Interpret(#[from] InterpretError),
}
