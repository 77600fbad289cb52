//! EXT: the extractive reference answer. For every gold sentence the most
//! similar sentence of the input documents is picked.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::metrics::embed::{greedy_match, Embedder, HashEmbedder};
use crate::text::{parse_heading_line, split_line_sentences, Tokenize, WordTokenizer};

/// Sentences of `text`, heading lines excluded.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.lines()
        .filter(|l| parse_heading_line(l).is_none())
        .flat_map(split_line_sentences)
        .map(str::to_owned)
        .collect()
}

/// Similarity of a candidate sentence to a reference sentence, in [0, 1].
pub trait SentenceScorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, candidate: &str, reference: &str) -> f64;
}

/// Embedding-matching F1 (fraction, not percent).
pub struct EmbedScorer<E = HashEmbedder> {
    pub embedder: E,
    pub tokenizer: WordTokenizer,
}

impl Default for EmbedScorer {
    fn default() -> Self {
        Self {
            embedder: HashEmbedder::default(),
            tokenizer: WordTokenizer,
        }
    }
}

impl<E: Embedder> SentenceScorer for EmbedScorer<E> {
    fn name(&self) -> &str {
        "embed-f1"
    }

    fn score(&self, candidate: &str, reference: &str) -> f64 {
        let embed = |t: &str| {
            self.tokenizer
                .tokenize(t)
                .iter()
                .map(|tok| self.embedder.embed(tok))
                .collect::<Vec<_>>()
        };
        greedy_match(&embed(candidate), &embed(reference)).f / 100.0
    }
}

/// Bag-of-words token F1.
#[derive(Debug, Default, Clone, Copy)]
pub struct TokenF1Scorer;

impl SentenceScorer for TokenF1Scorer {
    fn name(&self) -> &str {
        "token-f1"
    }

    fn score(&self, candidate: &str, reference: &str) -> f64 {
        let c = WordTokenizer.tokenize(candidate);
        let r = WordTokenizer.tokenize(reference);
        if c.is_empty() || r.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &r {
            *counts.entry(t).or_default() += 1;
        }
        let mut overlap = 0usize;
        for t in &c {
            if let Some(n) = counts.get_mut(t.as_str()) {
                if *n > 0 {
                    *n -= 1;
                    overlap += 1;
                }
            }
        }
        if overlap == 0 {
            return 0.0;
        }
        let p = overlap as f64 / c.len() as f64;
        let rc = overlap as f64 / r.len() as f64;
        2.0 * p * rc / (p + rc)
    }
}

/// Picks, for each gold sentence in order, the document sentence with the
/// highest score. A verbatim copy of the gold sentence is always picked,
/// whatever the scorer's rounding; ties go to the better-ranked document,
/// then the earlier sentence. Picks are joined with single spaces and may
/// repeat.
pub fn ext_answer(gold: &str, docs: &[impl AsRef<str>], scorer: &dyn SentenceScorer) -> String {
    let pool: Vec<String> = docs.iter().flat_map(|d| split_sentences(d.as_ref())).collect();
    if pool.is_empty() {
        return String::new();
    }
    let picks: Vec<&str> = split_sentences(gold)
        .par_iter()
        .map(|g| {
            if let Some(same) = pool.iter().find(|s| *s == g) {
                return same.as_str();
            }
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (i, s) in pool.iter().enumerate() {
                let score = scorer.score(s, g);
                if score > best_score {
                    best = i;
                    best_score = score;
                }
            }
            pool[best].as_str()
        })
        .collect();
    picks.join(" ")
}
