//! Greedy embedding-matching F1 in the style of BERTScore.

use crate::metrics::lexical::Prf;
use crate::text::Tokenize;

/// Maps a token to a unit-norm vector. Implementations must be
/// deterministic.
pub trait Embedder: Sync {
    fn embed(&self, token: &str) -> Vec<f64>;
}

/// Dependency-free embedder: character n-grams of the token (with boundary
/// markers) plus the whole token are hashed with a seeded FNV-1a into
/// `dim` buckets, and the count vector is normalized.
///
/// Vectors are non-negative, so cosines fall in [0, 1]; tokens sharing
/// n-grams ("plan", "plans") land close together.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub ngram: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dim: 256,
            seed: 0x5eed,
            ngram: 3,
        }
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Embedder for HashEmbedder {
    fn embed(&self, token: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut bump = |feature: &str| {
            v[(fnv1a(self.seed, feature.as_bytes()) % self.dim as u64) as usize] += 1.0;
        };
        bump(token);
        let marked: Vec<char> = std::iter::once('<').chain(token.chars()).chain(std::iter::once('>')).collect();
        if marked.len() >= self.ngram {
            for w in marked.windows(self.ngram) {
                bump(&w.iter().collect::<String>());
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(0.0, 1.0)
}

/// Greedy matching on pre-embedded tokens. Each side scores the mean over
/// its tokens of the best cosine against the other side (negatives clamped
/// to 0). Empty input on either side gives zeros.
pub fn greedy_match(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> Prf {
    if candidate.is_empty() || reference.is_empty() {
        return Prf::default();
    }
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|x| to.iter().map(|y| cosine(x, y)).fold(0.0, f64::max))
            .sum::<f64>()
            / from.len() as f64
    };
    Prf::from_fractions(best(candidate, reference), best(reference, candidate))
}

pub fn embed_f1(candidate: &str, reference: &str, tokenizer: &dyn Tokenize, embedder: &dyn Embedder) -> Prf {
    let embed = |t: &str| tokenizer.tokenize(t).iter().map(|tok| embedder.embed(tok)).collect::<Vec<_>>();
    greedy_match(&embed(candidate), &embed(reference))
}
