//! Emotion prototypes from hidden states: prompt pairs, differencing, PCA,
//! similarity heatmaps and decision probing.

mod pairs;
mod pca;
mod repr;
mod synth;

use thiserror::Error;

use crate::llm::LlmError;
use crate::tensor::TensorError;

pub use pairs::{
    build_prompt_pairs, read_pairs_jsonl, read_trace, render_probe_prompt, write_pairs_jsonl, write_trace,
    HiddenTrace, PromptPair,
};
pub use pca::{jacobi_eigen, pca_first_component, power_iteration, top_eigenvector};
pub use repr::{
    average_ranks, category_similarity_matrix, extract_category_representation, probe_score,
    rank_probability_curve, spearman, CategoryRepresentation, ProbeQuery, RankCurve, SimilarityScale,
};
pub use synth::{
    orthonormal_set, synth_decisions, synth_generate, synth_labels, synth_queries, SynthConfig, SynthQuery,
    SynthWorld, TIMESTEP_TAG,
};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("label {label:?} has {available} samples, {needed} needed")]
    InsufficientSamples {
        label: String,
        needed: usize,
        available: usize,
    },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("non-finite value in input")]
    NonFinite,
    #[error("rank-zero input: all rows are identical")]
    RankZero,
    #[error("rank-zero differences at layer {0}")]
    RankZeroLayer(usize),
    #[error("representation {0:?} has a zero layer mean")]
    ZeroNorm(String),
    #[error("inconsistent label sets: {0}")]
    InconsistentLabels(String),
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension {dim} cannot hold {labels} near-orthogonal directions")]
    DimTooSmall { dim: usize, labels: usize },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
