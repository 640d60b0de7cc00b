use thiserror::Error;

use crate::corpus::CorpusError;
use crate::decision::DecisionError;
use crate::eval::EvalError;
use crate::llm::LlmError;
use crate::probe::ProbeError;
use crate::retrieval::RetrievalError;
use crate::softlabel::SoftLabelError;
use crate::tensor::TensorError;

/// Any error the library can raise.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    SoftLabel(#[from] SoftLabelError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
