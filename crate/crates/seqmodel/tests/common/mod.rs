//! Independent oracles for the sequence model: central finite differences
//! and a one-step-at-a-time likelihood loop.
#![allow(dead_code)]

use cagen_seqmodel::{Graph, Seq2Seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Probe {
    pub query: Vec<usize>,
    pub docs: Vec<Vec<usize>>,
    pub plan: Option<Vec<usize>>,
    pub target: Vec<usize>,
}

fn nll(model: &Seq2Seq, probe: &Probe) -> f64 {
    let mut g = Graph::new();
    let mem = model
        .encode_fused(&mut g, &probe.query, &probe.docs, probe.plan.as_deref())
        .unwrap();
    let loss = model.teacher_forced_nll(&mut g, &mem, &probe.target).unwrap();
    g.scalar(loss)
}

pub struct FdResult {
    pub name: String,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Compares backprop against central differences on `per_matrix` random
/// coordinates of every parameter matrix. Relative error is measured
/// against `max(|analytic|, |numeric|, floor)`.
pub fn finite_difference(model: &Seq2Seq, probe: &Probe, per_matrix: usize, seed: u64, floor: f64) -> Vec<FdResult> {
    let mut g = Graph::new();
    let mem = model
        .encode_fused(&mut g, &probe.query, &probe.docs, probe.plan.as_deref())
        .unwrap();
    let loss = model.teacher_forced_nll(&mut g, &mem, &probe.target).unwrap();
    let grads = g.backward(loss);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-5;
    let mut out = Vec::new();
    for (i, p) in model.params().iter().enumerate() {
        let n = p.value.len();
        let coords: Vec<usize> = if n <= per_matrix {
            (0..n).collect()
        } else {
            (0..per_matrix).map(|_| rng.gen_range(0..n)).collect()
        };
        for c in coords {
            let analytic = grads.get((model.slot(), i)).map_or(0.0, |m| m.data[c]);
            let shifted = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[i].value.data[c] += delta;
                nll(&m, probe)
            };
            let numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            out.push(FdResult {
                name: p.name.clone(),
                coord: c,
                analytic,
                numeric,
                rel_err,
            });
        }
    }
    out
}

/// `-Σ_k log P(target_k | target_<k)` with one fresh decoder pass per
/// prefix.
pub fn stepwise_nll(model: &Seq2Seq, probe: &Probe) -> f64 {
    let mut g = Graph::new();
    let mem = model
        .encode_fused(&mut g, &probe.query, &probe.docs, probe.plan.as_deref())
        .unwrap();
    let memory = g.value(mem.vectors).clone();
    let mut total = 0.0;
    for k in 0..probe.target.len() {
        let lp = model.next_log_probs(&memory, &probe.target[..k]);
        total -= lp[probe.target[k]];
    }
    total
}

pub fn random_probe(rng: &mut ChaCha8Rng, vocab: usize, docs: usize) -> Probe {
    let mut seq = |lo: usize, hi: usize| -> Vec<usize> {
        let len = rng.gen_range(lo..=hi);
        (0..len).map(|_| rng.gen_range(7..vocab)).collect()
    };
    let query = seq(1, 4);
    let docs = (0..docs).map(|_| seq(1, 6)).collect();
    let plan = Some(seq(1, 4));
    let mut target = seq(1, 6);
    target.push(cagen_seqmodel::tokenizer::EOS);
    Probe {
        query,
        docs,
        plan,
        target,
    }
}
