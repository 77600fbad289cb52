//! Word-level vocabulary with reserved special tokens.
//!
//! Text is split on spaces; a newline is its own token so that multi-line
//! structured answers survive a tokenize/detokenize round trip.

use std::collections::HashMap;
use std::path::Path;

use crate::error::ModelError;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP_DOC: usize = 4;
pub const SEP_HEAD: usize = 5;
pub const NEWLINE: usize = 6;

const SPECIALS: [&str; 7] = ["<pad>", "<s>", "</s>", "<unk>", "<doc>", "<head>", "<nl>"];

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split('\n')
        .enumerate()
        .flat_map(|(i, line)| {
            let nl = if i > 0 { Some("\n") } else { None };
            nl.into_iter().chain(line.split(|c: char| c.is_whitespace()).filter(|w| !w.is_empty()))
        })
}

impl Tokenizer {
    /// Vocabulary of every word in `texts` with at least `min_count`
    /// occurrences, ordered by descending frequency then lexicographically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in texts {
            for w in words(t).filter(|w| *w != "\n") {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !SPECIALS.contains(w))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Self::from_tokens(SPECIALS.iter().copied().chain(entries.into_iter().map(|(w, _)| w)).map(str::to_owned))
            .expect("specials are fixed")
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self, ModelError> {
        let tokens: Vec<String> = tokens.into_iter().collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(ModelError::Format("vocabulary must start with the special tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(ModelError::Format(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        words(text)
            .map(|w| if w == "\n" { NEWLINE } else { self.id(w).unwrap_or(UNK) })
            .collect()
    }

    /// Inverse of [`Tokenizer::encode`] on in-vocabulary text whose lines
    /// hold single-space separated words. `SEP_HEAD` renders as a newline;
    /// padding and sequence markers are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        let mut at_line_start = true;
        for &id in ids {
            match id {
                PAD | BOS | EOS => {}
                NEWLINE | SEP_HEAD => {
                    out.push('\n');
                    at_line_start = true;
                }
                _ => {
                    if !at_line_start {
                        out.push(' ');
                    }
                    out.push_str(self.token(id).unwrap_or("<unk>"));
                    at_line_start = false;
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| ModelError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
        Self::from_tokens(s.lines().map(str::to_owned))
    }
}
