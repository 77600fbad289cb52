//! Greedy and beam decoding over a fixed encoder memory.

use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::Seq2Seq;
use crate::tensor::Matrix;
use crate::tokenizer::EOS;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    #[default]
    Greedy,
    Beam(usize),
}

impl FromStr for Decoding {
    type Err = String;

    /// `greedy` or `beam:<width>`.
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "greedy" {
            return Ok(Decoding::Greedy);
        }
        match s.strip_prefix("beam:").map(str::parse::<usize>) {
            Some(Ok(w)) if w > 0 => Ok(Decoding::Beam(w)),
            _ => Err(format!("unknown decoding {s:?}, expected greedy or beam:<width>")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated tokens, EOS excluded.
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities, EOS included when it was produced.
    pub log_prob: f64,
    pub finished: bool,
}

/// Decodes at most `max_len` tokens (further capped by the model's
/// `max_target_len`), stopping at EOS.
pub fn generate(model: &Seq2Seq, memory: &Matrix, decoding: Decoding, max_len: usize) -> Generation {
    match decoding {
        Decoding::Greedy => greedy(model, memory, max_len),
        Decoding::Beam(width) => beam(model, memory, width, max_len),
    }
}

/// Highest-probability token at every step; the lowest id wins ties.
pub fn greedy(model: &Seq2Seq, memory: &Matrix, max_len: usize) -> Generation {
    let max = max_len.min(model.config().max_target_len);
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < max {
        let lp = model.next_log_probs(memory, &tokens);
        let next = crate::model::argmax(&lp);
        log_prob += lp[next];
        if next == EOS {
            return Generation {
                tokens,
                log_prob,
                finished: true,
            };
        }
        tokens.push(next);
    }
    Generation {
        tokens,
        log_prob,
        finished: false,
    }
}

fn rank(a: &Generation, b: &Generation) -> Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search ranked by total log-probability, ties broken by the
/// lexicographically smaller token sequence. Width 1 reproduces [`greedy`].
pub fn beam(model: &Seq2Seq, memory: &Matrix, width: usize, max_len: usize) -> Generation {
    let width = width.max(1);
    let max = max_len.min(model.config().max_target_len);
    let mut beams = vec![Generation {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    while beams.iter().any(|b| !b.finished) {
        let mut candidates = Vec::new();
        for b in beams {
            if b.finished || b.tokens.len() >= max {
                candidates.push(b);
                continue;
            }
            let lp = model.next_log_probs(memory, &b.tokens);
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&x, &y| lp[y].partial_cmp(&lp[x]).unwrap_or(Ordering::Equal).then(x.cmp(&y)));
            for &t in order.iter().take(width) {
                let mut tokens = b.tokens.clone();
                let finished = t == EOS;
                if !finished {
                    tokens.push(t);
                }
                candidates.push(Generation {
                    tokens,
                    log_prob: b.log_prob + lp[t],
                    finished,
                });
            }
        }
        candidates.sort_by(rank);
        candidates.truncate(width);
        if candidates.iter().all(|c| c.finished || c.tokens.len() >= max) {
            beams = candidates;
            break;
        }
        beams = candidates;
    }
    beams.into_iter().next().expect("beam is never empty")
}
