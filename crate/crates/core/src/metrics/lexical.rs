//! Exact-match overlap metrics: ROUGE-L and METEOR.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::text::Tokenize;

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Precision / recall / F on the percent scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f: f64,
}

impl Prf {
    /// From fractions in [0,1]; F is the harmonic mean, 0 when P + R = 0.
    pub fn from_fractions(p: f64, r: f64) -> Self {
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Self {
            p: 100.0 * p,
            r: 100.0 * r,
            f: 100.0 * f,
        }
    }
}

pub fn rouge_l_tokens<T: PartialEq>(candidate: &[T], reference: &[T]) -> Prf {
    if candidate.is_empty() || reference.is_empty() {
        return Prf::default();
    }
    let lcs = lcs_length(candidate, reference) as f64;
    Prf::from_fractions(lcs / candidate.len() as f64, lcs / reference.len() as f64)
}

/// Whole-sequence ROUGE-L between two texts.
pub fn rouge_l(candidate: &str, reference: &str, tokenizer: &dyn Tokenize) -> Prf {
    rouge_l_tokens(&tokenizer.tokenize(candidate), &tokenizer.tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

/// Search-node cap for the chunk-minimizing alignment. Below it the result
/// is exact; above it the best alignment found so far is kept.
const ALIGN_BUDGET: usize = 200_000;

struct AlignSearch<'a> {
    cand: &'a [usize],
    ref_positions: &'a [Vec<usize>],
    used: Vec<bool>,
    need: Vec<usize>,
    skips: Vec<usize>,
    best: usize,
    nodes: usize,
}

impl AlignSearch<'_> {
    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        if chunks >= self.best || self.nodes >= ALIGN_BUDGET {
            return;
        }
        self.nodes += 1;
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        let w = self.cand[i];
        if self.need[w] > 0 {
            let continuing = prev.map(|p| p + 1);
            let mut order: Vec<usize> = Vec::with_capacity(self.ref_positions[w].len());
            if let Some(c) = continuing {
                if self.ref_positions[w].contains(&c) && !self.used[c] {
                    order.push(c);
                }
            }
            order.extend(
                self.ref_positions[w]
                    .iter()
                    .copied()
                    .filter(|&j| Some(j) != continuing && !self.used[j]),
            );
            for j in order {
                self.used[j] = true;
                self.need[w] -= 1;
                let added = usize::from(Some(j) != continuing);
                self.run(i + 1, Some(j), chunks + added);
                self.need[w] += 1;
                self.used[j] = false;
            }
        }
        if self.skips[w] > 0 {
            self.skips[w] -= 1;
            self.run(i + 1, None, chunks);
            self.skips[w] += 1;
        }
    }
}

/// Exact unigram alignment: maximum number of matches, then the fewest
/// chunks (runs contiguous in both sequences) among maximum alignments.
pub fn align<T: Eq + std::hash::Hash>(candidate: &[T], reference: &[T]) -> Alignment {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let mut intern = |t| {
        let n = ids.len();
        *ids.entry(t).or_insert(n)
    };
    let cand: Vec<usize> = candidate.iter().map(&mut intern).collect();
    let refr: Vec<usize> = reference.iter().map(&mut intern).collect();
    let types = ids.len();

    let mut ref_positions = vec![Vec::new(); types];
    for (j, &w) in refr.iter().enumerate() {
        ref_positions[w].push(j);
    }
    let mut cand_count = vec![0usize; types];
    for &w in &cand {
        cand_count[w] += 1;
    }
    let need: Vec<usize> = (0..types).map(|w| cand_count[w].min(ref_positions[w].len())).collect();
    let matches: usize = need.iter().sum();
    if matches == 0 {
        return Alignment::default();
    }
    let skips = (0..types).map(|w| cand_count[w] - need[w]).collect();
    let mut search = AlignSearch {
        cand: &cand,
        ref_positions: &ref_positions,
        used: vec![false; refr.len()],
        need,
        skips,
        best: usize::MAX,
        nodes: 0,
    };
    search.run(0, None, 0);
    Alignment {
        matches,
        chunks: search.best,
    }
}

pub fn meteor_tokens<T: Eq + std::hash::Hash>(candidate: &[T], reference: &[T]) -> f64 {
    let Alignment { matches, chunks } = align(candidate, reference);
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    100.0 * fmean * (1.0 - penalty)
}

/// Exact-match METEOR on the percent scale.
pub fn meteor(candidate: &str, reference: &str, tokenizer: &dyn Tokenize) -> f64 {
    meteor_tokens(&tokenizer.tokenize(candidate), &tokenizer.tokenize(reference))
}
