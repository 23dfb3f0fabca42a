//! Mini-batch Adam training on MAE, k-fold cross-validation, paired
//! geometry-only / multimodal ablation and the comparison report.

mod ablation;
mod adam;
mod folds;
mod report;
mod trainer;

pub use ablation::{run_ablation, AblationConfig, AblationOutput, GateRow};
pub use adam::{Adam, AdamConfig};
pub use folds::{fold_hash, split_folds, training_indices};
pub use report::{
    aggregate, format_change, parse_csv, percent_change, render_table, verify, write_csv, AblationReport, CsvRow,
    ReportRow, CSV_HEADER, RUNS_NOTE,
};
pub use trainer::{evaluate, fit, train, Evaluation, FoldResult, Fitted, Prediction, TargetScaler, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::params::ParamError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite gradient at step {step} for parameter {param}")]
    NonFiniteGradient { step: u64, param: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("report: {0}")]
    Report(String),
    #[error("csv line {line}: {message}")]
    Schema { line: usize, message: String },
}
