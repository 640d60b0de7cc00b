//! Metrics, experiment runs and parameter sweeps.

mod ablate;
mod metrics;
mod run;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::decision::DecisionError;
use crate::llm::LlmError;
use crate::retrieval::RetrievalError;
use crate::softlabel::SoftLabelError;

pub use ablate::{run_ablation_suite, write_per_label_csv, GridPoint, ParamGrid, SuiteResult, Variant};
pub use metrics::{compute_metrics, LabelMetrics, Metrics};
pub use run::{
    run_experiment, run_experiment_recording, Ablations, Effective, QueryRecord, QueryStatus, RunConfig, RunReport,
    DEFAULT_ALPHA, DEFAULT_K1, DEFAULT_K2, DEFAULT_K3,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to score")]
    EmptyRecords,
    #[error("gold label {0:?} is not in the label set")]
    UnknownGold(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("train and test label sets differ: {train:?} vs {test:?}")]
    LabelSetMismatch { train: Vec<String>, test: Vec<String> },
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("malformed report: {0}")]
    Format(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    SoftLabel(#[from] SoftLabelError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
