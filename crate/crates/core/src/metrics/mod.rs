//! Evaluation metrics. All scores are on the percent scale.

pub mod embed;
pub mod lexical;
pub mod report;

pub use embed::{embed_f1, greedy_match, Embedder, HashEmbedder};
pub use lexical::{align, lcs_length, meteor, meteor_tokens, rouge_l, rouge_l_tokens, Alignment, Prf};
pub use report::{
    answer_table, bootstrap_mid, load_predictions, plan_stats, plan_table, write_predictions, Evaluator,
    MetricsError, MetricsReport, PlanBlock, PlanStats, Prediction, QueryMetrics, TableFormat, TextScores,
};
