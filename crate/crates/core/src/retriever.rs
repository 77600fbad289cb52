//! BM25 retrieval over an in-memory inverted index.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ParagraphStore;
use crate::text::analyze;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("cannot index an empty paragraph store")]
    EmptyStore,
    #[error("unknown para_id {0:?}")]
    UnknownParagraph(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Index into [`InvertedIndex::doc_ids`].
    pub doc: u32,
    pub tf: u32,
}

/// Documents are numbered in ascending `para_id` order, so every postings
/// list sorted by `doc` is also sorted by `para_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    avgdl: f64,
}

impl InvertedIndex {
    pub fn build(store: &ParagraphStore, params: Bm25Params) -> Result<Self, RetrievalError> {
        Self::from_documents(store.iter().map(|p| (p.para_id.as_str(), p.text.as_str())), params)
    }

    pub fn from_documents<'a>(
        docs: impl IntoIterator<Item = (&'a str, &'a str)>,
        params: Bm25Params,
    ) -> Result<Self, RetrievalError> {
        let mut docs: Vec<(&str, &str)> = docs.into_iter().collect();
        if docs.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        docs.sort_by(|a, b| a.0.cmp(b.0));

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(docs.len());
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (doc, (id, text)) in docs.into_iter().enumerate() {
            let terms = analyze(text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &terms {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
            doc_ids.push(id.to_owned());
            doc_lengths.push(terms.len() as u32);
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / doc_lengths.len() as f64;
        Ok(Self {
            params,
            doc_ids,
            doc_lengths,
            postings,
            avgdl,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_length(&self, para_id: &str) -> Option<u32> {
        self.doc_index(para_id).map(|d| self.doc_lengths[d])
    }

    fn doc_index(&self, para_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|id| id.as_str().cmp(para_id)).ok()
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`, positive for every df ≤ N.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count() as f64;
        let df = self.postings(term).len() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let dl = self.doc_lengths[doc] as f64;
        idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / self.avgdl))
    }

    /// BM25 score of one document. Repeated query terms count repeatedly.
    pub fn bm25_score(&self, query_terms: &[String], para_id: &str) -> Result<f64, RetrievalError> {
        let doc = self
            .doc_index(para_id)
            .ok_or_else(|| RetrievalError::UnknownParagraph(para_id.to_owned()))?;
        let mut score = 0.0;
        for term in query_terms {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by_key(&(doc as u32), |p| p.doc) {
                score += self.term_weight(self.idf(term), list[pos].tf, doc);
            }
        }
        Ok(score)
    }

    /// Top-`k` documents by BM25, ties broken by ascending `para_id`.
    /// Documents that match no query term are never returned.
    pub fn retrieve(&self, query_id: &str, query_text: &str, k: usize) -> RetrievedList {
        let terms = analyze(query_text);
        self.retrieve_terms(query_id, &terms, k)
    }

    pub fn retrieve_terms(&self, query_id: &str, terms: &[String], k: usize) -> RetrievedList {
        // term-at-a-time accumulation; per document the contributions are
        // added in query-term order, same as `bm25_score`
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        for term in terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in list {
                *acc.entry(p.doc).or_insert(0.0) += self.term_weight(idf, p.tf, p.doc as usize);
            }
        }
        let mut scored: Vec<(u32, f64)> = acc.into_iter().filter(|(_, s)| *s > 0.0).collect();
        // doc order == para_id order
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        RetrievedList {
            query_id: query_id.to_owned(),
            entries: scored
                .into_iter()
                .enumerate()
                .map(|(i, (doc, score))| RetrievedEntry {
                    para_id: self.doc_ids[doc as usize].clone(),
                    score,
                    rank: i + 1,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEntry {
    pub para_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedList {
    pub query_id: String,
    pub entries: Vec<RetrievedEntry>,
}

impl RetrievedList {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Standard six-column TREC run lines, each newline terminated.
    pub fn to_trec(&self, tag: &str) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{} Q0 {} {} {:.4} {}", self.query_id, e.para_id, e.rank, e.score, tag);
        }
        out
    }
}
