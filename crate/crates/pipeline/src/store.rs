//! Pipeline checkpoint directory:
//!
//! ```text
//! <dir>/pipeline.json   regime, setting, decoding and model hashes
//! <dir>/planner/        planning regimes only
//! <dir>/generator/
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use cagen_core::Setting;
use cagen_seqmodel::checkpoint::{self, CONFIG_FILE, PARAMS_FILE, VOCAB_FILE};
use cagen_seqmodel::Decoding;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PlanFeed, Regime};
use crate::error::PipelineError;
use crate::infer::Pipeline;

pub const FORMAT: &str = "cagen-pipeline/1";
pub const META_FILE: &str = "pipeline.json";
pub const PLANNER_DIR: &str = "planner";
pub const GENERATOR_DIR: &str = "generator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMeta {
    pub format: String,
    pub regime: Regime,
    pub setting: Setting,
    pub k: usize,
    pub decoding: Decoding,
    pub plan_feed: PlanFeed,
    /// SHA-256 of each model directory, keyed by directory name.
    pub hashes: BTreeMap<String, String>,
}

/// SHA-256 over the config, parameter and vocabulary files of one model
/// checkpoint, each prefixed by its file name.
pub fn model_hash(dir: &Path) -> Result<String, PipelineError> {
    let mut h = Sha256::new();
    for name in [CONFIG_FILE, PARAMS_FILE, VOCAB_FILE] {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn save(dir: &Path, pipeline: &Pipeline) -> Result<PipelineMeta, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut hashes = BTreeMap::new();
    if let Some(planner) = &pipeline.planner {
        let d = dir.join(PLANNER_DIR);
        checkpoint::save(&d, planner, &pipeline.tokenizer)?;
        hashes.insert(PLANNER_DIR.to_owned(), model_hash(&d)?);
    }
    let d = dir.join(GENERATOR_DIR);
    checkpoint::save(&d, &pipeline.generator, &pipeline.tokenizer)?;
    hashes.insert(GENERATOR_DIR.to_owned(), model_hash(&d)?);
    let meta = PipelineMeta {
        format: FORMAT.into(),
        regime: pipeline.regime,
        setting: pipeline.setting,
        k: pipeline.k,
        decoding: pipeline.decoding,
        plan_feed: pipeline.plan_feed,
        hashes,
    };
    let path = dir.join(META_FILE);
    let json = serde_json::to_string_pretty(&meta).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| PipelineError::io(&path, e))?;
    Ok(meta)
}

pub fn load(dir: &Path) -> Result<(Pipeline, PipelineMeta), PipelineError> {
    let path = dir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
    let meta: PipelineMeta = serde_json::from_str(&text).map_err(|e| PipelineError::io(&path, e))?;
    if meta.format != FORMAT {
        return Err(PipelineError::Config(format!("unsupported pipeline format {:?}", meta.format)));
    }
    for (name, expected) in &meta.hashes {
        let actual = model_hash(&dir.join(name))?;
        if &actual != expected {
            return Err(PipelineError::Config(format!("{name} checkpoint hash mismatch")));
        }
    }
    let (generator, tokenizer) = checkpoint::load(&dir.join(GENERATOR_DIR))?;
    let planner = if meta.regime.uses_planner() {
        let (planner, ptok) = checkpoint::load(&dir.join(PLANNER_DIR))?;
        if ptok != tokenizer {
            return Err(PipelineError::Config("planner and generator vocabularies differ".into()));
        }
        Some(planner)
    } else {
        None
    };
    let pipeline = Pipeline {
        regime: meta.regime,
        setting: meta.setting,
        k: meta.k,
        decoding: meta.decoding,
        plan_feed: meta.plan_feed,
        planner,
        generator,
        tokenizer,
    };
    Ok((pipeline, meta))
}
