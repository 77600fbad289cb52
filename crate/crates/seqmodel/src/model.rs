//! Pre-LN encoder-decoder transformer with fusion-style encoding: every
//! `(query, document)` pair is encoded on its own and the decoder attends
//! over the concatenation of all pair encodings.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::graph::{Graph, Var};
use crate::tensor::Matrix;
use crate::tokenizer::{BOS, EOS, PAD, SEP_DOC, SEP_HEAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder and decoder depth.
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Filled in from the tokenizer when training starts.
    #[serde(default)]
    pub vocab_size: usize,
    /// Cap on each encoded `(query, doc[, plan])` pair.
    pub max_source_len: usize,
    /// Cap on decoder length, EOS included.
    pub max_target_len: usize,
    #[serde(default)]
    pub dropout: f64,
    pub seed: u64,
    /// Restrict decoder self-attention to the current heading, i.e. each
    /// heading is predicted from its own earlier tokens only.
    #[serde(default)]
    pub heading_local_attention: bool,
}

impl ModelConfig {
    /// Two layers, width 32: the scale used for overfit and gradient tests.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            d_model: 32,
            heads: 4,
            d_ff: 64,
            vocab_size,
            max_source_len: 64,
            max_target_len: 96,
            dropout: 0.0,
            seed: 0,
            heading_local_attention: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_source_len", self.max_source_len),
            ("max_target_len", self.max_target_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.vocab_size <= SEP_HEAD {
            return Err(ModelError::Config("vocab_size smaller than the special tokens".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone, Copy)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    norm_attn: Norm,
    attn: Attention,
    norm_ff: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    norm_self: Norm,
    self_attn: Attention,
    norm_cross: Norm,
    cross_attn: Attention,
    norm_ff: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct Layout {
    tok_embed: usize,
    enc_pos: usize,
    dec_pos: usize,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    lm_head: Linear,
}

struct Builder {
    params: Vec<Param>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn add(&mut self, name: String, value: Matrix) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> usize {
        let data = (0..rows * cols).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            w: self.uniform(format!("{name}.w"), fan_in, fan_out, bound),
            b: self.add(format!("{name}.b"), Matrix::zeros(1, fan_out)),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.add(format!("{name}.gamma"), Matrix::filled(1, d, 1.0)),
            beta: self.add(format!("{name}.beta"), Matrix::zeros(1, d)),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ff(&mut self, name: &str, d: usize, d_ff: usize) -> FeedForward {
        FeedForward {
            up: self.linear(&format!("{name}.up"), d, d_ff),
            down: self.linear(&format!("{name}.down"), d_ff, d),
        }
    }
}

/// Which input a span of encoded positions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentTag {
    Query,
    /// Zero-based rank of the document in the input list.
    Doc(usize),
    Plan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub tag: SegmentTag,
    pub start: usize,
    pub len: usize,
}

/// Encoder output: one row per encoded position plus the map of which input
/// each row came from. Every position belongs to exactly one segment.
#[derive(Debug, Clone)]
pub struct EncodedMemory {
    pub vectors: Var,
    pub segments: Vec<Segment>,
    /// Number of pair sequences that had to be cut to `max_source_len`.
    pub truncated: usize,
}

impl EncodedMemory {
    pub fn positions(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    /// Wraps planner decoder states as a plan-tagged memory.
    pub fn from_plan_states(g: &Graph, states: Var) -> Self {
        let len = g.value(states).rows;
        Self {
            vectors: states,
            segments: vec![Segment {
                tag: SegmentTag::Plan,
                start: 0,
                len,
            }],
            truncated: 0,
        }
    }

    /// `self` positions first, then `other`.
    pub fn concat(self, g: &mut Graph, other: EncodedMemory) -> Self {
        let offset = self.positions();
        let vectors = g.concat_rows(&[self.vectors, other.vectors]);
        let mut segments = self.segments;
        segments.extend(other.segments.into_iter().map(|s| Segment {
            start: s.start + offset,
            ..s
        }));
        Self {
            vectors,
            segments,
            truncated: self.truncated + other.truncated,
        }
    }
}

/// Result of a teacher-forced pass over one target.
#[derive(Debug, Clone, Copy)]
pub struct TeacherForced {
    /// Summed negative log-likelihood (1×1).
    pub loss: Var,
    /// Final decoder states, one row per decoder input position.
    pub states: Var,
    pub logits: Var,
    /// Targets whose argmax prediction was correct / number of targets.
    pub correct: usize,
    pub counted: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct Seq2Seq {
    config: ModelConfig,
    slot: u8,
    params: Vec<Param>,
    layout: Layout,
}

impl Seq2Seq {
    /// Fresh model initialized from `config.seed`. `slot` tags its
    /// parameters on a shared [`Graph`].
    pub fn new(config: ModelConfig, slot: u8) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let mut b = Builder {
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let emb_bound = (3.0 / d as f64).sqrt();
        let tok_embed = b.uniform("embed.tokens".into(), config.vocab_size, d, emb_bound);
        let enc_pos = b.uniform("embed.enc_pos".into(), config.max_source_len, d, 0.1);
        let dec_pos = b.uniform("embed.dec_pos".into(), config.max_target_len, d, 0.1);
        let encoder = (0..config.layers)
            .map(|i| EncoderLayer {
                norm_attn: b.norm(&format!("enc.{i}.norm_attn"), d),
                attn: b.attention(&format!("enc.{i}.attn"), d),
                norm_ff: b.norm(&format!("enc.{i}.norm_ff"), d),
                ff: b.ff(&format!("enc.{i}.ff"), d, config.d_ff),
            })
            .collect();
        let enc_norm = b.norm("enc.norm", d);
        let decoder = (0..config.layers)
            .map(|i| DecoderLayer {
                norm_self: b.norm(&format!("dec.{i}.norm_self"), d),
                self_attn: b.attention(&format!("dec.{i}.self_attn"), d),
                norm_cross: b.norm(&format!("dec.{i}.norm_cross"), d),
                cross_attn: b.attention(&format!("dec.{i}.cross_attn"), d),
                norm_ff: b.norm(&format!("dec.{i}.norm_ff"), d),
                ff: b.ff(&format!("dec.{i}.ff"), d, config.d_ff),
            })
            .collect();
        let dec_norm = b.norm("dec.norm", d);
        let lm_head = b.linear("lm_head", d, config.vocab_size);
        Ok(Self {
            config,
            slot,
            params: b.params,
            layout: Layout {
                tok_embed,
                enc_pos,
                dec_pos,
                encoder,
                enc_norm,
                decoder,
                dec_norm,
                lm_head,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn slot(&self) -> u8 {
        self.slot
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Zeroes the output projection so every step predicts the uniform
    /// distribution over the vocabulary.
    pub fn zero_output_head(&mut self) {
        let Linear { w, b } = self.layout.lm_head;
        self.params[w].value.data.fill(0.0);
        self.params[b].value.data.fill(0.0);
    }

    fn p(&self, g: &mut Graph, id: usize) -> Var {
        g.param((self.slot, id), &self.params[id].value)
    }

    fn linear(&self, g: &mut Graph, l: Linear, x: Var) -> Var {
        let w = self.p(g, l.w);
        let b = self.p(g, l.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn norm(&self, g: &mut Graph, n: Norm, x: Var) -> Var {
        let gamma = self.p(g, n.gamma);
        let beta = self.p(g, n.beta);
        g.layer_norm(x, gamma, beta)
    }

    fn attention(&self, g: &mut Graph, a: Attention, x_q: Var, x_kv: Var, mask: Option<Rc<Vec<bool>>>) -> Var {
        let q = self.linear(g, a.q, x_q);
        let k = self.linear(g, a.k, x_kv);
        let v = self.linear(g, a.v, x_kv);
        let dh = self.config.d_model / self.config.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.config.heads)
            .map(|h| {
                let qh = g.slice_cols(q, h * dh, dh);
                let kh = g.slice_cols(k, h * dh, dh);
                let vh = g.slice_cols(v, h * dh, dh);
                let scores = g.matmul_t(qh, kh);
                let scores = g.scale(scores, scale);
                let probs = g.softmax(scores, mask.clone());
                g.matmul(probs, vh)
            })
            .collect();
        let ctx = g.concat_cols(&heads);
        self.linear(g, a.o, ctx)
    }

    fn feed_forward(&self, g: &mut Graph, f: FeedForward, x: Var) -> Var {
        let h = self.linear(g, f.up, x);
        let h = g.gelu(h);
        self.linear(g, f.down, h)
    }

    fn residual(&self, g: &mut Graph, x: Var, delta: Var) -> Var {
        let delta = g.dropout(delta);
        g.add(x, delta)
    }

    fn embed(&self, g: &mut Graph, ids: &[usize], pos_table: usize) -> Var {
        let table = self.p(g, self.layout.tok_embed);
        let tok = g.gather(table, ids);
        let pos_t = self.p(g, pos_table);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let pos = g.gather(pos_t, &positions);
        let x = g.add(tok, pos);
        g.dropout(x)
    }

    /// Encodes one token sequence (at most `max_source_len` long).
    pub fn encode(&self, g: &mut Graph, ids: &[usize]) -> Var {
        assert!(!ids.is_empty() && ids.len() <= self.config.max_source_len);
        let mut x = self.embed(g, ids, self.layout.enc_pos);
        for layer in &self.layout.encoder {
            let h = self.norm(g, layer.norm_attn, x);
            let h = self.attention(g, layer.attn, h, h, None);
            x = self.residual(g, x, h);
            let h = self.norm(g, layer.norm_ff, x);
            let h = self.feed_forward(g, layer.ff, h);
            x = self.residual(g, x, h);
        }
        self.norm(g, self.layout.enc_norm, x)
    }

    /// Encodes `query ⊕ SEP_DOC ⊕ doc_i [⊕ SEP_HEAD ⊕ plan]` for every
    /// document independently and concatenates the results. Over-long pairs
    /// are cut: the document shrinks first, then the plan, then the query.
    pub fn encode_fused(
        &self,
        g: &mut Graph,
        query: &[usize],
        docs: &[Vec<usize>],
        plan: Option<&[usize]>,
    ) -> Result<EncodedMemory, ModelError> {
        if docs.is_empty() {
            return Err(ModelError::NoDocuments);
        }
        let max = self.config.max_source_len;
        let mut parts = Vec::with_capacity(docs.len());
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut truncated = 0;
        for (rank, doc) in docs.iter().enumerate() {
            let plan_len = plan.map_or(0, |p| p.len() + 1);
            let mut q_len = query.len();
            let mut d_len = doc.len() + 1;
            let mut p_len = plan_len;
            let mut excess = (q_len + d_len + p_len).saturating_sub(max);
            if excess > 0 {
                truncated += 1;
                for len in [&mut d_len, &mut p_len, &mut q_len] {
                    let cut = excess.min(*len);
                    *len -= cut;
                    excess -= cut;
                }
            }
            let mut ids = Vec::with_capacity(q_len + d_len + p_len);
            ids.extend_from_slice(&query[..q_len]);
            if d_len > 0 {
                ids.push(SEP_DOC);
                ids.extend_from_slice(&doc[..d_len - 1]);
            }
            if let (Some(p), true) = (plan, p_len > 0) {
                ids.push(SEP_HEAD);
                ids.extend_from_slice(&p[..p_len - 1]);
            }
            if ids.is_empty() {
                // degenerate limits: keep a lone separator so the pair still exists
                ids.push(SEP_DOC);
                d_len = 1;
            }
            for (tag, len) in [(SegmentTag::Query, q_len), (SegmentTag::Doc(rank), d_len), (SegmentTag::Plan, p_len)] {
                if len > 0 {
                    segments.push(Segment { tag, start: offset, len });
                    offset += len;
                }
            }
            parts.push(self.encode(g, &ids));
        }
        let vectors = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        Ok(EncodedMemory {
            vectors,
            segments,
            truncated,
        })
    }

    fn self_attention_mask(&self, inputs: &[usize]) -> Rc<Vec<bool>> {
        let n = inputs.len();
        let segment: Vec<usize> = if self.config.heading_local_attention {
            inputs
                .iter()
                .scan(0usize, |seg, &t| {
                    if t == SEP_HEAD {
                        *seg += 1;
                    }
                    Some(*seg)
                })
                .collect()
        } else {
            vec![0; n]
        };
        let mut mask = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                mask[i * n + j] = segment[i] == segment[j];
            }
        }
        Rc::new(mask)
    }

    /// Final decoder states for the given decoder inputs (which start with
    /// BOS), attending over `memory`.
    pub fn decode_states(&self, g: &mut Graph, memory: Var, inputs: &[usize]) -> Var {
        assert!(!inputs.is_empty() && inputs.len() <= self.config.max_target_len);
        let mask = self.self_attention_mask(inputs);
        let mut x = self.embed(g, inputs, self.layout.dec_pos);
        for layer in &self.layout.decoder {
            let h = self.norm(g, layer.norm_self, x);
            let h = self.attention(g, layer.self_attn, h, h, Some(mask.clone()));
            x = self.residual(g, x, h);
            let h = self.norm(g, layer.norm_cross, x);
            let h = self.attention(g, layer.cross_attn, h, memory, None);
            x = self.residual(g, x, h);
            let h = self.norm(g, layer.norm_ff, x);
            let h = self.feed_forward(g, layer.ff, h);
            x = self.residual(g, x, h);
        }
        self.norm(g, self.layout.dec_norm, x)
    }

    pub fn logits(&self, g: &mut Graph, states: Var) -> Var {
        self.linear(g, self.layout.lm_head, states)
    }

    /// Cuts an over-long target to `max_target_len`, keeping EOS last.
    pub fn clip_target<'a>(&self, target: &'a [usize]) -> std::borrow::Cow<'a, [usize]> {
        let max = self.config.max_target_len;
        if target.len() <= max {
            std::borrow::Cow::Borrowed(target)
        } else {
            let mut t = target[..max - 1].to_vec();
            t.push(EOS);
            std::borrow::Cow::Owned(t)
        }
    }

    /// Teacher-forced pass: decoder inputs are `BOS ⊕ target[..n-1]`.
    pub fn teacher_forced(&self, g: &mut Graph, memory: Var, target: &[usize]) -> Result<TeacherForced, ModelError> {
        if target.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        if target.last() != Some(&EOS) {
            return Err(ModelError::MissingEos);
        }
        let clipped = self.clip_target(target);
        let target = clipped.as_ref();
        let mut inputs = Vec::with_capacity(target.len());
        inputs.push(BOS);
        inputs.extend_from_slice(&target[..target.len() - 1]);
        let states = self.decode_states(g, memory, &inputs);
        let logits = self.logits(g, states);
        let targets: Vec<Option<usize>> = target.iter().map(|&t| (t != PAD).then_some(t)).collect();
        let loss = g.cross_entropy(logits, &targets);
        let lv = g.value(logits);
        let mut correct = 0;
        let mut counted = 0;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                counted += 1;
                if argmax(lv.row(i)) == *t {
                    correct += 1;
                }
            }
        }
        Ok(TeacherForced {
            loss,
            states,
            logits,
            correct,
            counted,
            truncated: matches!(clipped, std::borrow::Cow::Owned(_)),
        })
    }

    /// `-Σ_k log P(target_k | target_<k, memory)`.
    pub fn teacher_forced_nll(&self, g: &mut Graph, memory: &EncodedMemory, target: &[usize]) -> Result<Var, ModelError> {
        Ok(self.teacher_forced(g, memory.vectors, target)?.loss)
    }

    /// Log-probabilities of the next token after `prefix` (BOS excluded).
    pub fn next_log_probs(&self, memory: &Matrix, prefix: &[usize]) -> Vec<f64> {
        let mut g = Graph::new();
        let mem = g.constant(memory.clone());
        let mut inputs = Vec::with_capacity(prefix.len() + 1);
        inputs.push(BOS);
        inputs.extend_from_slice(prefix);
        let states = self.decode_states(&mut g, mem, &inputs);
        let last = g.slice_rows(states, inputs.len() - 1, 1);
        let logits = self.logits(&mut g, last);
        log_softmax(g.value(logits).row(0))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|x| x - log_z).collect()
}
