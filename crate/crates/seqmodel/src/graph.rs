//! Reverse-mode automatic differentiation on a tape of 2-D matrices.
//!
//! A [`Graph`] is built per forward pass. Parameters are bound by
//! `(slot, index)` so that several models can share one tape and gradients
//! can be read back per model.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use rand::Rng;

use crate::tensor::Matrix;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Key of a bound parameter: `(model slot, parameter index)`.
pub type ParamKey = (u8, usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    /// Row softmax; masked entries are exactly 0 and get no gradient.
    Softmax(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Dropout(Var, Vec<f64>),
    /// Summed negative log-likelihood; `None` targets are skipped.
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamKey, Var>,
    dropout: Option<(f64, rand_chacha::ChaCha8Rng)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            dropout: None,
        }
    }

    /// Enables dropout with rate `p` drawn from `rng`.
    pub fn with_dropout(mut self, p: f64, rng: rand_chacha::ChaCha8Rng) -> Self {
        if p > 0.0 {
            self.dropout = Some((p, rng));
        }
        self
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    /// Constant input; gradients reaching it are discarded.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a parameter once per tape.
    pub fn param(&mut self, key: ParamKey, value: &Matrix) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!((1, self.value(a).cols), r.shape());
        let r = r.data.clone();
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            v.row_mut(i).iter_mut().zip(&r).for_each(|(x, y)| *x += y);
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for x in v.data.iter_mut() {
            let u = GELU_C * (*x + 0.044715 * *x * *x * *x);
            *x = 0.5 * *x * (1.0 + u.tanh());
        }
        self.push(v, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat.data[i * cols + j] = h;
                out.data[i * cols + j] = g[j] * h + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row softmax; `mask[i*cols+j] == false` pins the output to 0.
    pub fn softmax(&mut self, a: Var, mask: Option<Rc<Vec<bool>>>) -> Var {
        let av = self.value(a);
        let (rows, cols) = av.shape();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let allowed = |j: usize| mask.as_ref().is_none_or(|m| m[i * cols + j]);
            let row = av.row(i);
            let max = (0..cols).filter(|&j| allowed(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let o = out.row_mut(i);
            let mut sum = 0.0;
            for j in 0..cols {
                if allowed(j) {
                    o[j] = (row[j] - max).exp();
                    sum += o[j];
                }
            }
            o.iter_mut().for_each(|x| *x /= sum);
        }
        self.push(out, Op::Softmax(a))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(out, Op::Gather(table, ids.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols, cols);
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows, rows);
            for i in 0..rows {
                out.row_mut(i)[off..off + m.cols].copy_from_slice(m.row(i));
            }
            off += m.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        let data = m.data[start * m.cols..(start + len) * m.cols].to_vec();
        let cols = m.cols;
        self.push(Matrix::from_vec(len, cols, data), Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let m = self.value(a);
        let mut out = Matrix::zeros(m.rows, len);
        for i in 0..m.rows {
            out.row_mut(i).copy_from_slice(&m.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    /// Inverted dropout; identity unless the graph was built with dropout.
    pub fn dropout(&mut self, a: Var) -> Var {
        let Some((p, rng)) = self.dropout.as_mut() else {
            return a;
        };
        let p = *p;
        let n = self.nodes[a.0].value.len();
        let keep: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
            .collect();
        let mut v = self.value(a).clone();
        v.data.iter_mut().zip(&keep).for_each(|(x, k)| *x *= k);
        self.push(v, Op::Dropout(a, keep))
    }

    /// `Σ_i -log softmax(logits_i)[target_i]` over rows with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len());
        let mut probs = Matrix::zeros(lv.rows, lv.cols);
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let log_z = max + sum.ln();
            for (p, x) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (x - log_z).exp();
            }
            if let Some(t) = t {
                total += log_z - row[*t];
            }
        }
        self.push(
            Matrix::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Backpropagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b));
                    let db = self.value(*a).t_matmul(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.t_matmul(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        dr.data.iter_mut().zip(g.row(i)).for_each(|(x, y)| *x += y);
                    }
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, dr);
                }
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.scale(*s);
                    acc(&mut grads, *a, d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (gi, &xi) in d.data.iter_mut().zip(&x.data) {
                        let u = GELU_C * (xi + 0.044715 * xi * xi * xi);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * xi * xi);
                        *gi *= 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * du;
                    }
                    acc(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = xhat.shape();
                    let gv = &self.value(*gamma).data;
                    let mut dx = Matrix::zeros(rows, cols);
                    let mut dgamma = Matrix::zeros(1, cols);
                    let mut dbeta = Matrix::zeros(1, cols);
                    let n = cols as f64;
                    for (i, &s) in inv_std.iter().enumerate().take(rows) {
                        let gy = g.row(i);
                        let xh = xhat.row(i);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..cols {
                            let d = gy[j] * gv[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                            dgamma.data[j] += gy[j] * xh[j];
                            dbeta.data[j] += gy[j];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = s * (gy[j] * gv[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gamma, dgamma);
                    acc(&mut grads, *beta, dbeta);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = Matrix::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yj, gj)) in d.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yj * (gj - dot);
                        }
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Gather(table, ids) => {
                    let t = self.value(*table);
                    let mut d = Matrix::zeros(t.rows, t.cols);
                    for (i, &id) in ids.iter().enumerate() {
                        d.row_mut(id).iter_mut().zip(g.row(i)).for_each(|(x, y)| *x += y);
                    }
                    acc(&mut grads, *table, d);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let d = Matrix::from_vec(r, c, g.data[off * c..(off + r) * c].to_vec());
                        acc(&mut grads, *p, d);
                        off += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let (r, c) = self.value(*p).shape();
                        let mut d = Matrix::zeros(r, c);
                        for i in 0..r {
                            d.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        acc(&mut grads, *p, d);
                        off += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut d = Matrix::zeros(r, c);
                    d.data[start * c..start * c + g.len()].copy_from_slice(&g.data);
                    acc(&mut grads, *a, d);
                }
                Op::SliceCols(a, start) => {
                    let (r, c) = self.value(*a).shape();
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        d.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Dropout(a, keep) => {
                    let mut d = g;
                    d.data.iter_mut().zip(keep).for_each(|(x, k)| *x *= k);
                    acc(&mut grads, *a, d);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g.data[0];
                    let mut d = Matrix::zeros(probs.rows, probs.cols);
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(t) = t {
                            let o = d.row_mut(i);
                            o.copy_from_slice(probs.row(i));
                            o[*t] -= 1.0;
                            o.iter_mut().for_each(|x| *x *= scale);
                        }
                    }
                    acc(&mut grads, *logits, d);
                }
            }
        }

        let params = self
            .params
            .iter()
            .filter_map(|(k, v)| grads[v.0].take().map(|g| (*k, g)))
            .collect();
        Gradients { params }
    }
}

/// Parameter gradients from one backward pass. Parameters that did not
/// take part in the loss have no entry, i.e. an exactly zero gradient.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: BTreeMap<ParamKey, Matrix>,
}

impl Gradients {
    pub fn get(&self, key: ParamKey) -> Option<&Matrix> {
        self.params.get(&key)
    }

    /// L2 norm over all parameters of one model slot.
    pub fn slot_norm(&self, slot: u8) -> f64 {
        self.params
            .iter()
            .filter(|(k, _)| k.0 == slot)
            .map(|(_, g)| g.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ParamKey> {
        self.params.keys()
    }

    /// Adds `other` into `self`.
    pub fn accumulate(&mut self, other: Gradients) {
        for (k, g) in other.params {
            match self.params.get_mut(&k) {
                Some(existing) => existing.add_assign(&g),
                None => {
                    self.params.insert(k, g);
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.params.values_mut().for_each(|g| g.scale(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.params.values().map(Matrix::sum_sq).sum::<f64>().sqrt()
    }
}
