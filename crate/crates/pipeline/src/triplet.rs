//! Query-answer-plan triplets with their retrieved documents.

use std::sync::atomic::{AtomicUsize, Ordering};

use cagen_core::corpus::{parse_plan, Plan};
use cagen_core::text::first_sentence;
use cagen_core::{AnswerExample, InvertedIndex, ParagraphStore, Setting};
use cagen_seqmodel::tokenizer::{EOS, SEP_HEAD};
use cagen_seqmodel::Tokenizer;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriplet {
    pub query_id: String,
    pub query: String,
    /// Retrieved documents in rank order, each cut to its first sentence.
    pub docs: Vec<String>,
    pub plan: Plan,
    /// Structured or plain target, per setting.
    pub answer: String,
}

/// Retrieves `k` documents per example. Examples whose query retrieves
/// nothing are dropped; the second value counts them.
pub fn make_triplets(
    examples: &[AnswerExample],
    index: &InvertedIndex,
    store: &ParagraphStore,
    k: usize,
    setting: Setting,
) -> (Vec<TrainingTriplet>, usize) {
    let mut out = Vec::with_capacity(examples.len());
    let mut dropped = 0;
    for ex in examples {
        let docs = retrieve_docs(index, store, &ex.query_id, &ex.query_text, k);
        if docs.is_empty() {
            dropped += 1;
            continue;
        }
        out.push(TrainingTriplet {
            query_id: ex.query_id.clone(),
            query: ex.query_text.clone(),
            docs,
            plan: ex.plan.clone(),
            answer: ex.target(setting).to_owned(),
        });
    }
    (out, dropped)
}

pub fn retrieve_docs(index: &InvertedIndex, store: &ParagraphStore, query_id: &str, query: &str, k: usize) -> Vec<String> {
    index
        .retrieve(query_id, query, k)
        .entries
        .iter()
        .filter_map(|e| store.get(&e.para_id))
        .map(|p| first_sentence(&p.text).to_owned())
        .collect()
}

/// Heading lines joined by `SEP_HEAD`, without EOS.
pub fn encode_plan(tokenizer: &Tokenizer, plan: &Plan) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, h) in plan.headings.iter().enumerate() {
        if i > 0 {
            out.push(SEP_HEAD);
        }
        out.extend(tokenizer.encode(&h.to_line()));
    }
    out
}

pub fn decode_plan(tokenizer: &Tokenizer, ids: &[usize]) -> Plan {
    parse_plan(&tokenizer.decode(ids))
}

/// Vocabulary over every text a model reads or writes.
pub fn build_tokenizer(triplets: &[TrainingTriplet], min_count: usize) -> Tokenizer {
    let plans: Vec<String> = triplets.iter().map(|t| cagen_core::corpus::serialize_plan(&t.plan)).collect();
    let texts = triplets
        .iter()
        .flat_map(|t| std::iter::once(t.query.as_str()).chain(t.docs.iter().map(String::as_str)).chain([t.answer.as_str()]))
        .chain(plans.iter().map(String::as_str));
    Tokenizer::build(texts, min_count)
}

/// Token-level triplet. Plan reads are counted so that a regime can prove
/// it never looked at plan targets.
#[derive(Debug)]
pub struct EncodedTriplet {
    pub query_id: String,
    pub query: Vec<usize>,
    pub docs: Vec<Vec<usize>>,
    /// Answer tokens followed by EOS.
    pub answer: Vec<usize>,
    plan: Vec<usize>,
    plan_reads: AtomicUsize,
}

impl Clone for EncodedTriplet {
    fn clone(&self) -> Self {
        Self {
            query_id: self.query_id.clone(),
            query: self.query.clone(),
            docs: self.docs.clone(),
            answer: self.answer.clone(),
            plan: self.plan.clone(),
            plan_reads: AtomicUsize::new(0),
        }
    }
}

impl EncodedTriplet {
    pub fn new(tokenizer: &Tokenizer, t: &TrainingTriplet) -> Self {
        let mut plan = encode_plan(tokenizer, &t.plan);
        plan.push(EOS);
        let mut answer = tokenizer.encode(&t.answer);
        answer.push(EOS);
        Self {
            query_id: t.query_id.clone(),
            query: tokenizer.encode(&t.query),
            docs: t.docs.iter().map(|d| tokenizer.encode(d)).collect(),
            answer,
            plan,
            plan_reads: AtomicUsize::new(0),
        }
    }

    /// Plan tokens followed by EOS.
    pub fn plan_target(&self) -> &[usize] {
        self.plan_reads.fetch_add(1, Ordering::Relaxed);
        &self.plan
    }

    /// Plan tokens without EOS, as fed to a generator.
    pub fn plan_input(&self) -> &[usize] {
        self.plan_reads.fetch_add(1, Ordering::Relaxed);
        &self.plan[..self.plan.len() - 1]
    }

    pub fn has_plan(&self) -> bool {
        self.plan.len() > 1
    }

    pub fn has_answer(&self) -> bool {
        self.answer.len() > 1
    }

    pub fn plan_reads(&self) -> usize {
        self.plan_reads.load(Ordering::Relaxed)
    }
}

pub fn encode_triplets(tokenizer: &Tokenizer, triplets: &[TrainingTriplet]) -> Vec<EncodedTriplet> {
    triplets.iter().map(|t| EncodedTriplet::new(tokenizer, t)).collect()
}
