use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use cagen_core::Setting;
use cagen_seqmodel::{AdamConfig, Decoding, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Answer generated directly from query and documents.
    #[serde(rename = "t5_baseline", alias = "t5")]
    T5Baseline,
    /// Planner and generator trained separately, generator on gold plans.
    #[serde(rename = "planning_seq", alias = "seq")]
    PlanningSeq,
    /// Planner and generator trained jointly; the generator reads the
    /// planner's output states.
    #[serde(rename = "planning_e2e", alias = "e2e")]
    PlanningE2e,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::T5Baseline, Regime::PlanningSeq, Regime::PlanningE2e];

    pub fn name(self) -> &'static str {
        match self {
            Regime::T5Baseline => "t5_baseline",
            Regime::PlanningSeq => "planning_seq",
            Regime::PlanningE2e => "planning_e2e",
        }
    }

    pub fn uses_planner(self) -> bool {
        !matches!(self, Regime::T5Baseline)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "t5" | "t5_baseline" => Ok(Regime::T5Baseline),
            "seq" | "planning_seq" => Ok(Regime::PlanningSeq),
            "e2e" | "planning_e2e" => Ok(Regime::PlanningE2e),
            _ => Err(format!("unknown regime {s:?}, expected t5, seq or e2e")),
        }
    }
}

/// What the generator is told about the plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    /// Gold plan tokens appended to every document pair.
    Gold,
    /// Greedy planner output tokens appended to every document pair.
    PlannerOutput,
    /// Planner decoder states on the gold plan, prepended to the memory.
    PlannerEmbeddings,
}

/// How an end-to-end generator receives the decoded plan at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanFeed {
    /// Planner decoder states over the decoded plan, as in training.
    #[default]
    Embeddings,
    /// Decoded plan tokens appended to every document pair.
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub planner: u64,
    pub generator: u64,
    /// Batch order and dropout masks.
    pub data: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            planner: 1,
            generator: 2,
            data: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Optimizer steps per trained model.
    pub max_steps: usize,
    pub batch_size: usize,
    /// Stop once teacher-forced token accuracy on the training triplets
    /// reaches this fraction for every trained model.
    pub target_accuracy: Option<f64>,
    /// Additionally require the mean per-token loss to fall to this value
    /// before stopping.
    pub target_token_loss: Option<f64>,
    pub eval_every: usize,
    pub min_vocab_count: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_steps: 2000,
            batch_size: 8,
            target_accuracy: Some(0.95),
            target_token_loss: None,
            eval_every: 10,
            min_vocab_count: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Paths {
    pub examples: Option<PathBuf>,
    pub index: Option<PathBuf>,
}

/// Run configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub regime: Option<Regime>,
    pub setting: Setting,
    #[serde(default = "default_k")]
    pub k: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub plan_feed: PlanFeed,
    #[serde(default)]
    pub paths: Paths,
}

fn default_k() -> usize {
    10
}

impl RunConfig {
    /// Tiny model, defaults elsewhere.
    pub fn tiny(setting: Setting) -> Self {
        Self {
            regime: None,
            setting,
            k: default_k(),
            model: ModelConfig::tiny(0),
            optimizer: AdamConfig::default(),
            decoding: Decoding::Greedy,
            seeds: Seeds::default(),
            training: TrainingConfig::default(),
            plan_feed: PlanFeed::Embeddings,
            paths: Paths::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        if self.training.batch_size == 0 {
            return Err(PipelineError::Config("batch_size must be at least 1".into()));
        }
        if self.training.eval_every == 0 {
            return Err(PipelineError::Config("eval_every must be at least 1".into()));
        }
        if let Some(a) = self.training.target_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(PipelineError::Config(format!("target_accuracy {a} outside [0, 1]")));
            }
        }
        if self.optimizer.lr.is_nan() || self.optimizer.lr <= 0.0 {
            return Err(PipelineError::Config("learning rate must be positive".into()));
        }
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(16);
        model.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regime_names() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert_eq!("e2e".parse::<Regime>().unwrap(), Regime::PlanningE2e);
        let r: Regime = serde_json::from_str("\"seq\"").unwrap();
        assert_eq!(r, Regime::PlanningSeq);
        assert_eq!(serde_json::to_string(&Regime::T5Baseline).unwrap(), "\"t5_baseline\"");
    }

    #[test]
    fn minimal_json_config() {
        let json = r#"{"setting": "structured", "model": {"layers": 2, "d_model": 32, "heads": 4, "d_ff": 64,
            "max_source_len": 48, "max_target_len": 64, "seed": 0}}"#;
        let c: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.k, 10);
        assert_eq!(c.training.max_steps, 2000);
        assert_eq!(c.optimizer.clip_norm, Some(1.0));
        c.validate().unwrap();
    }
}
