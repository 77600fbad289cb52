//! Independent brute-force oracles. Nothing here calls the code under test
//! except the text analyzer.
#![allow(dead_code)]

use std::collections::HashMap;

/// LCS by enumerating every subsequence of the shorter sequence.
pub fn brute_lcs<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 20);
    let mut best = 0;
    for mask in 0u32..(1u32 << short.len()) {
        let ones = mask.count_ones() as usize;
        if ones <= best {
            continue;
        }
        let sub: Vec<&T> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| &short[i]).collect();
        let mut it = long.iter();
        if sub.iter().all(|x| it.any(|y| y == *x)) {
            best = ones;
        }
    }
    best
}

pub fn rouge_from_lcs(lcs: usize, cand: usize, refr: usize) -> (f64, f64, f64) {
    if cand == 0 || refr == 0 || lcs == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = lcs as f64 / cand as f64;
    let r = lcs as f64 / refr as f64;
    (100.0 * p, 100.0 * r, 100.0 * 2.0 * p * r / (p + r))
}

fn count_chunks(pairs: &mut [(usize, usize)]) -> usize {
    pairs.sort();
    let mut chunks = 0;
    for (i, &(c, r)) in pairs.iter().enumerate() {
        if i == 0 || !(pairs[i - 1].0 + 1 == c && pairs[i - 1].1 + 1 == r) {
            chunks += 1;
        }
    }
    chunks
}

/// Every one-to-one partial alignment of equal tokens; returns the maximum
/// match count and, among alignments reaching it, the minimum chunk count.
pub fn brute_alignment<T: PartialEq>(cand: &[T], refr: &[T]) -> (usize, usize) {
    fn go<T: PartialEq>(
        i: usize,
        cand: &[T],
        refr: &[T],
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        best: &mut (usize, usize),
    ) {
        if i == cand.len() {
            let m = pairs.len();
            let chunks = count_chunks(&mut pairs.clone());
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        go(i + 1, cand, refr, used, pairs, best);
        for j in 0..refr.len() {
            if !used[j] && cand[i] == refr[j] {
                used[j] = true;
                pairs.push((i, j));
                go(i + 1, cand, refr, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(0, cand, refr, &mut vec![false; refr.len()], &mut Vec::new(), &mut best);
    best
}

pub fn meteor_from_alignment(m: usize, chunks: usize, cand: usize, refr: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand as f64;
    let r = m as f64 / refr as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    100.0 * fmean * (1.0 - 0.5 * (chunks as f64 / m as f64).powi(3))
}

/// Scores every document from raw token lists and sorts by
/// (-score, para_id). Zero-score documents are dropped.
pub fn brute_bm25(docs: &[(String, Vec<String>)], query: &[String], k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let mut out = Vec::new();
    for (id, toks) in docs {
        let dl = toks.len() as f64;
        let mut score = 0.0;
        let mut matched = false;
        for q in query {
            let tf = toks.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = docs.iter().filter(|(_, t)| t.contains(q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        if matched && score > 0.0 {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

/// Greedy embedding match by explicit double loop, fractions in [0,1].
pub fn brute_greedy(cand: &[Vec<f64>], refr: &[Vec<f64>]) -> (f64, f64, f64) {
    if cand.is_empty() || refr.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let cos = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(0.0, 1.0);
    let mut p = 0.0;
    for c in cand {
        let mut m = 0.0f64;
        for r in refr {
            m = m.max(cos(c, r));
        }
        p += m;
    }
    p /= cand.len() as f64;
    let mut r = 0.0;
    for x in refr {
        let mut m = 0.0f64;
        for c in cand {
            m = m.max(cos(x, c));
        }
        r += m;
    }
    r /= refr.len() as f64;
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Multiset of whitespace tokens, for subset checks.
pub fn bag(s: &str) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for t in s.split_whitespace() {
        *m.entry(t.to_owned()).or_default() += 1;
    }
    m
}
