use cagen_core::corpus::{parse_plan, serialize_plan, Plan};
use cagen_core::metrics::Prediction;
use cagen_core::{InvertedIndex, ParagraphStore, Setting};
use cagen_seqmodel::decode::generate;
use cagen_seqmodel::tokenizer::BOS;
use cagen_seqmodel::{Decoding, Graph, Seq2Seq, Tokenizer};
use rayon::prelude::*;

use crate::config::{PlanFeed, Regime, RunConfig};
use crate::loss::plan_state_memory;
use crate::train::TrainedModels;
use crate::triplet::{decode_plan, retrieve_docs, TrainingTriplet};

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    /// Planner output; empty for the baseline.
    pub intermediate_plan: Plan,
    pub answer_text: String,
    /// Headings parsed out of `answer_text`.
    pub final_plan: Plan,
}

impl InferenceResult {
    pub fn to_prediction(&self, query_id: &str) -> Prediction {
        Prediction {
            query_id: query_id.to_owned(),
            intermediate_plan: serialize_plan(&self.intermediate_plan),
            answer: self.answer_text.clone(),
            final_plan: serialize_plan(&self.final_plan),
        }
    }
}

/// Trained models ready for generation.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub regime: Regime,
    pub setting: Setting,
    pub k: usize,
    pub decoding: Decoding,
    pub plan_feed: PlanFeed,
    pub planner: Option<Seq2Seq>,
    pub generator: Seq2Seq,
    pub tokenizer: Tokenizer,
}

impl Pipeline {
    pub fn from_trained(trained: TrainedModels, config: &RunConfig) -> Self {
        Self {
            regime: trained.regime,
            setting: config.setting,
            k: config.k,
            decoding: config.decoding,
            plan_feed: config.plan_feed,
            planner: trained.planner,
            generator: trained.generator,
            tokenizer: trained.tokenizer,
        }
    }

    /// Token-level inference: `(plan tokens, answer tokens)`, EOS excluded.
    /// A query without documents is encoded against a single empty one.
    pub fn infer_tokens(&self, query: &[usize], docs: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
        let empty = [Vec::new()];
        let docs = if docs.is_empty() { &empty[..] } else { docs };
        let planner = self.planner.as_ref().filter(|_| self.regime.uses_planner());
        let plan = match planner {
            Some(p) => {
                let mut g = Graph::new();
                let m = p.encode_fused(&mut g, query, docs, None).expect("docs are non-empty");
                generate(p, g.value(m.vectors), self.decoding, p.config().max_target_len).tokens
            }
            None => Vec::new(),
        };
        let gen = &self.generator;
        let mut g = Graph::new();
        let memory = match (self.regime, planner, self.plan_feed) {
            (Regime::T5Baseline, _, _) | (_, None, _) => gen.encode_fused(&mut g, query, docs, None),
            (Regime::PlanningE2e, Some(p), PlanFeed::Embeddings) => {
                let pm = p.encode_fused(&mut g, query, docs, None).expect("docs are non-empty");
                let mut inputs = vec![BOS];
                inputs.extend_from_slice(&plan);
                inputs.truncate(p.config().max_target_len);
                let states = p.decode_states(&mut g, pm.vectors, &inputs);
                Ok(plan_state_memory(&mut g, gen, states, query, docs).expect("docs are non-empty"))
            }
            _ => gen.encode_fused(&mut g, query, docs, Some(&plan)),
        }
        .expect("docs are non-empty");
        let answer = generate(gen, g.value(memory.vectors), self.decoding, gen.config().max_target_len).tokens;
        (plan, answer)
    }

    pub fn infer(&self, query: &str, docs: &[String]) -> InferenceResult {
        let q = self.tokenizer.encode(query);
        let d: Vec<Vec<usize>> = docs.iter().map(|x| self.tokenizer.encode(x)).collect();
        let (plan, answer) = self.infer_tokens(&q, &d);
        let answer_text = self.tokenizer.decode(&answer);
        InferenceResult {
            intermediate_plan: decode_plan(&self.tokenizer, &plan),
            final_plan: parse_plan(&answer_text),
            answer_text,
        }
    }

    pub fn infer_triplet(&self, t: &TrainingTriplet) -> InferenceResult {
        self.infer(&t.query, &t.docs)
    }

    /// Retrieves `self.k` documents and generates, in parallel over queries.
    pub fn predict(&self, queries: &[(String, String)], index: &InvertedIndex, store: &ParagraphStore) -> Vec<Prediction> {
        queries
            .par_iter()
            .map(|(id, text)| {
                let docs = retrieve_docs(index, store, id, text, self.k);
                self.infer(text, &docs).to_prediction(id)
            })
            .collect()
    }
}
