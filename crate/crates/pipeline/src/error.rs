use cagen_core::CorpusError;
use cagen_seqmodel::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("query {0:?}: empty plan target in the structured setting")]
    EmptyPlan(String),
    #[error("query {0:?}: empty answer target")]
    EmptyAnswer(String),
    #[error("no training triplets")]
    NoTriplets,
    #[error("{0} regime needs a planner")]
    MissingPlanner(&'static str),
    #[error("{what} diverged at step {step}: loss is {loss}")]
    Diverged { what: String, step: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}
