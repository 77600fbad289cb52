//! Retriever → planner → generator: training triplets, the three training
//! regimes and inference.

pub mod config;
pub mod error;
pub mod infer;
pub mod loss;
pub mod store;
pub mod train;
pub mod triplet;

pub use config::{PlanFeed, PlanSource, Regime, RunConfig, Seeds, TrainingConfig};
pub use error::PipelineError;
pub use infer::{InferenceResult, Pipeline};
pub use loss::{loss_answer, loss_answer_unplanned, loss_joint, loss_planning, JointLoss};
pub use train::{train, train_encoded, Accuracy, Evaluation, Objective, RunHistory, StepReport, TrainedModels, Trainer};
pub use triplet::{make_triplets, EncodedTriplet, TrainingTriplet};
