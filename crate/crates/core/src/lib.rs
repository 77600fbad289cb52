//! Corpus adaptation, BM25 retrieval, evaluation metrics and the extractive
//! baseline for plan-guided answer generation.

pub mod baselines;
pub mod corpus;
pub mod metrics;
pub mod retriever;
pub mod text;

pub use corpus::{
    AnswerExample, AnswerPage, CorpusError, Heading, Paragraph, ParagraphStore, Plan, Section, Setting, StatsRecord,
};
pub use retriever::{Bm25Params, InvertedIndex, RetrievalError, RetrievedEntry, RetrievedList};
