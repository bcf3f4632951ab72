//! Wengert-style tape for reverse-mode differentiation.
//!
//! Every operation appends one node whose parents have strictly smaller
//! indices, so a reverse index sweep is a valid topological order.

use super::ops::{self, add_into};
use super::{Array, ParameterStore, Result, TensorError, IGNORE_INDEX};
use rand::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tensor {
    id: usize,
}

impl Tensor {
    pub fn id(self) -> usize {
        self.id
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize, Broadcast),
    Sub(usize, usize),
    Mul(usize, usize, Broadcast),
    Scale(usize, f64),
    MulConst(usize, Vec<f64>),
    Relu(usize),
    Gelu(usize),
    Sigmoid(usize),
    Reshape(usize),
    SumAll(usize),
    MeanAll(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Softmax(usize),
    GatherRows(usize, Vec<usize>),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        probs: Vec<f64>,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<i64>,
        probs: Vec<f64>,
        count: usize,
    },
    Mse {
        pred: usize,
        target: Vec<f64>,
    },
    L2Align {
        pairs: Vec<(usize, Vec<f64>)>,
    },
    WeightedSum {
        weights: usize,
        experts: Vec<usize>,
    },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b, _) | Op::Sub(a, b) | Op::Mul(a, b, _) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Relu(a)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::Softmax(a)
            | Op::GatherRows(a, _) => vec![*a],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Mse { pred, .. } => vec![*pred],
            Op::L2Align { pairs } => pairs.iter().map(|(k, _)| *k).collect(),
            Op::WeightedSum { weights, experts } => {
                let mut p = vec![*weights];
                p.extend(experts);
                p
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// A computation graph recorded during one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<(String, usize)>,
}

fn dim_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Dimension {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op) -> Tensor {
        let requires_grad = op.parents().iter().any(|&p| self.nodes[p].requires_grad);
        self.push_with(value, op, requires_grad)
    }

    fn push_with(&mut self, value: Array, op: Op, requires_grad: bool) -> Tensor {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Tensor {
            id: self.nodes.len() - 1,
        }
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Array) -> Tensor {
        self.push_with(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Tensor {
        self.push_with(value, Op::Leaf, false)
    }

    /// Copies a store parameter onto the tape. Only trainable parameters
    /// receive gradients; [`Tape::write_grads`] routes them back by name.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Tensor> {
        let value = store.value(name)?.clone();
        let t = self.push_with(value, Op::Leaf, store.is_trainable(name));
        self.bound.push((name.to_string(), t.id));
        Ok(t)
    }

    /// Parameter that is on the tape only if present in the store.
    pub fn param_opt(&mut self, store: &ParameterStore, name: &str) -> Result<Option<Tensor>> {
        if store.contains(name) {
            self.param(store, name).map(Some)
        } else {
            Ok(None)
        }
    }

    /// New leaf holding the same values, cut from the graph.
    pub fn detach(&mut self, t: Tensor) -> Tensor {
        let value = self.nodes[t.id].value.clone();
        self.constant(value)
    }

    pub fn value(&self, t: Tensor) -> &Array {
        &self.nodes[t.id].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        self.nodes[t.id].value.shape()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.id].requires_grad
    }

    pub fn grad(&self, t: Tensor) -> Option<&[f64]> {
        self.nodes[t.id].grad.as_deref()
    }

    /// Parent node ids recorded for `t`, one per operand use.
    pub fn parents(&self, t: Tensor) -> Vec<usize> {
        self.nodes[t.id].op.parents()
    }

    pub fn scalar_value(&self, t: Tensor) -> f64 {
        self.nodes[t.id].value.data()[0]
    }

    // ---------------------------------------------------------------- linear

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = ops::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Array::new(vec![m, n], out)?, Op::MatMul(a.id, b.id)))
    }

    pub fn transpose(&mut self, a: Tensor) -> Result<Tensor> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(TensorError::Shape {
                op: "transpose",
                shape: s.to_vec(),
                reason: "expected rank 2",
            });
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Array::new(vec![c, r], out)?, Op::Transpose(a.id)))
    }

    /// `x @ w + b` for `x: [.., in]`, `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Tensor, w: Tensor, b: Option<Tensor>) -> Result<Tensor> {
        let shape = self.shape(x).to_vec();
        let flat = self.flatten_rows(x)?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add(y, b)?;
        }
        let mut out_shape = shape;
        let out_dim = self.shape(w)[1];
        if let Some(last) = out_shape.last_mut() {
            *last = out_dim;
        }
        if out_shape.len() == 2 {
            Ok(y)
        } else {
            self.reshape(y, &out_shape)
        }
    }

    /// Views `[.., d]` as `[rows, d]`.
    pub fn flatten_rows(&mut self, x: Tensor) -> Result<Tensor> {
        let v = self.value(x);
        if v.shape().len() == 2 {
            return Ok(x);
        }
        let shape = [v.rows(), v.last_dim()];
        self.reshape(x, &shape)
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Result<Tensor> {
        let value = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a.id)))
    }

    // ----------------------------------------------------------- elementwise

    fn broadcast_kind(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<Broadcast> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() == vb.shape() {
            Ok(Broadcast::Same)
        } else if vb.len() == va.last_dim() && vb.shape().iter().rev().skip(1).all(|&e| e == 1) {
            Ok(Broadcast::Row)
        } else {
            Err(dim_err(op, va.shape(), vb.shape()))
        }
    }

    /// `a + b`; `b` may be a row vector broadcast over the rows of `a`.
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let kind = self.broadcast_kind("add", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let d = va.last_dim().max(1);
        let out: Vec<f64> = match kind {
            Broadcast::Same => va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect(),
            Broadcast::Row => va
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + vb.data()[i % d])
                .collect(),
        };
        let value = Array::new(va.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Add(a.id, b.id, kind)))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(dim_err("sub", va.shape(), vb.shape()));
        }
        let out = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Array::new(va.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Sub(a.id, b.id)))
    }

    /// Elementwise product; `b` may be a broadcast row vector.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let kind = self.broadcast_kind("mul", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let d = va.last_dim().max(1);
        let out: Vec<f64> = match kind {
            Broadcast::Same => va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect(),
            Broadcast::Row => va
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x * vb.data()[i % d])
                .collect(),
        };
        let value = Array::new(va.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Mul(a.id, b.id, kind)))
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Tensor {
        let va = self.value(a);
        let out = va.data().iter().map(|x| x * s).collect();
        let value = Array::new(va.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::Scale(a.id, s))
    }

    fn unary(&mut self, a: Tensor, f: impl Fn(f64) -> f64, op: Op) -> Tensor {
        let va = self.value(a);
        let out = va.data().iter().map(|&x| f(x)).collect();
        let value = Array::new(va.shape().to_vec(), out).expect("same shape");
        self.push(value, op)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a.id))
    }

    /// GeLU, tanh approximation.
    pub fn gelu(&mut self, a: Tensor) -> Tensor {
        self.unary(a, ops::gelu, Op::Gelu(a.id))
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        self.unary(a, ops::sigmoid, Op::Sigmoid(a.id))
    }

    /// Inverted dropout with keep-probability `1 - p`. Identity when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Tensor, p: f64, rng: &mut R) -> Tensor {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let factor: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let va = self.value(a);
        let out = va.data().iter().zip(&factor).map(|(x, f)| x * f).collect();
        let value = Array::new(va.shape().to_vec(), out).expect("same shape");
        self.push(value, Op::MulConst(a.id, factor))
    }

    // ------------------------------------------------------------ reductions

    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s = self.value(a).data().iter().sum();
        self.push(Array::scalar(s), Op::SumAll(a.id))
    }

    pub fn mean(&mut self, a: Tensor) -> Result<Tensor> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(TensorError::Empty("mean"));
        }
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Array::scalar(s), Op::MeanAll(a.id)))
    }

    // ---------------------------------------------------------- normalization

    /// Per-row normalization over the last axis followed by `gain * x + bias`.
    pub fn layer_norm(&mut self, x: Tensor, gain: Tensor, bias: Tensor, eps: f64) -> Result<Tensor> {
        let vx = self.value(x);
        let d = vx.last_dim();
        if d == 0 || vx.shape().is_empty() {
            return Err(TensorError::Shape {
                op: "layer_norm",
                shape: vx.shape().to_vec(),
                reason: "feature dimension must be positive",
            });
        }
        let (vg, vb) = (self.value(gain), self.value(bias));
        if vg.len() != d || vb.len() != d {
            return Err(dim_err("layer_norm", vx.shape(), vg.shape()));
        }
        let rows = vx.rows();
        let mut out = vec![0.0; vx.len()];
        let mut xhat = vec![0.0; vx.len()];
        let mut rstd = vec![0.0; rows];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            rstd[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * vg.data()[j] + vb.data()[j];
            }
        }
        let value = Array::new(vx.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                rstd,
            },
        ))
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax_rows(&mut self, x: Tensor) -> Result<Tensor> {
        let vx = self.value(x);
        let d = vx.last_dim();
        if d == 0 {
            return Err(TensorError::Shape {
                op: "softmax_rows",
                shape: vx.shape().to_vec(),
                reason: "row length must be positive",
            });
        }
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(d) {
            ops::softmax_in_place(row);
        }
        let value = Array::new(vx.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax(x.id)))
    }

    // ------------------------------------------------------------- indexing

    /// Selects rows of a `[rows, d]` view. Also serves as embedding lookup.
    pub fn gather_rows(&mut self, x: Tensor, rows: &[usize]) -> Result<Tensor> {
        let vx = self.value(x);
        let d = vx.last_dim();
        let n = vx.rows();
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n {
                return Err(TensorError::IndexOutOfRange { index: r, rows: n });
            }
            out.extend_from_slice(vx.row(r));
        }
        let value = Array::new(vec![rows.len(), d], out)?;
        Ok(self.push(value, Op::GatherRows(x.id, rows.to_vec())))
    }

    // ------------------------------------------------------------- attention

    /// Scaled dot-product attention over `batch` sequences of length `seq`.
    ///
    /// `q`, `k`, `v` are `[batch * seq, d]` with heads laid out as contiguous
    /// slices of width `d / heads`. `key_mask[b * seq + s]` is false for
    /// padding keys, which receive zero weight.
    pub fn attention(
        &mut self,
        q: Tensor,
        k: Tensor,
        v: Tensor,
        key_mask: &[bool],
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Tensor> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        if vq.shape() != vk.shape() || vq.shape() != vv.shape() {
            return Err(dim_err("attention", vq.shape(), vk.shape()));
        }
        let d = vq.last_dim();
        if vq.rows() != batch * seq || key_mask.len() != batch * seq {
            return Err(dim_err("attention", vq.shape(), &[batch, seq, d]));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Shape {
                op: "attention",
                shape: vq.shape().to_vec(),
                reason: "width not divisible by head count",
            });
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; batch * seq * d];
        let (qd, kd, vd) = (vq.data(), vk.data(), vv.data());
        for b in 0..batch {
            for h in 0..heads {
                let off = h * dh;
                for t in 0..seq {
                    let qi = (b * seq + t) * d + off;
                    let prow = &mut probs[((b * heads + h) * seq + t) * seq..][..seq];
                    for s in 0..seq {
                        if key_mask[b * seq + s] {
                            let ki = (b * seq + s) * d + off;
                            let dot: f64 = (0..dh).map(|j| qd[qi + j] * kd[ki + j]).sum();
                            prow[s] = dot * scale;
                        } else {
                            prow[s] = f64::NEG_INFINITY;
                        }
                    }
                    ops::softmax_in_place(prow);
                    let oi = (b * seq + t) * d + off;
                    for s in 0..seq {
                        let p = prow[s];
                        if p == 0.0 {
                            continue;
                        }
                        let vi = (b * seq + s) * d + off;
                        for j in 0..dh {
                            out[oi + j] += p * vd[vi + j];
                        }
                    }
                }
            }
        }
        let value = Array::new(vq.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q: q.id,
                k: k.id,
                v: v.id,
                probs,
                batch,
                seq,
                heads,
            },
        ))
    }

    // ---------------------------------------------------------------- losses

    /// Mean negative log-likelihood over rows whose label is not
    /// [`IGNORE_INDEX`]. Returns the loss and the number of supervised rows.
    pub fn masked_cross_entropy(&mut self, logits: Tensor, labels: &[i64]) -> Result<(Tensor, usize)> {
        let vl = self.value(logits);
        let classes = vl.last_dim();
        if vl.rows() != labels.len() {
            return Err(dim_err("masked_cross_entropy", vl.shape(), &[labels.len()]));
        }
        let mut probs = vec![0.0; vl.len()];
        let mut total = 0.0;
        let mut count = 0;
        for (r, &label) in labels.iter().enumerate() {
            if label == IGNORE_INDEX {
                continue;
            }
            if label < 0 || label as usize >= classes {
                return Err(TensorError::LabelOutOfRange { label, classes });
            }
            let row = vl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label as usize];
            let p = &mut probs[r * classes..(r + 1) * classes];
            for (pj, &z) in p.iter_mut().zip(row) {
                *pj = (z - lse).exp();
            }
            count += 1;
        }
        if count == 0 {
            return Err(TensorError::NoSupervisedPositions);
        }
        let loss = total / count as f64;
        let t = self.push(
            Array::scalar(loss),
            Op::CrossEntropy {
                logits: logits.id,
                labels: labels.to_vec(),
                probs,
                count,
            },
        );
        Ok((t, count))
    }

    /// Mean squared error of a flat prediction against constant targets.
    pub fn mse(&mut self, pred: Tensor, target: &[f64]) -> Result<Tensor> {
        let vp = self.value(pred);
        if vp.len() != target.len() {
            return Err(dim_err("mse", vp.shape(), &[target.len()]));
        }
        if target.is_empty() {
            return Err(TensorError::Empty("mse"));
        }
        let loss = vp
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / target.len() as f64;
        Ok(self.push(
            Array::scalar(loss),
            Op::Mse {
                pred: pred.id,
                target: target.to_vec(),
            },
        ))
    }

    /// `(1/L) sum_l mean_tokens ||F_l - K_l||^2`, summing over features.
    ///
    /// The first element of each pair is read as a constant; gradient flows
    /// into the second element only.
    pub fn l2_alignment(&mut self, pairs: &[(Tensor, Tensor)]) -> Result<Tensor> {
        if pairs.is_empty() {
            return Err(TensorError::Empty("l2_alignment"));
        }
        let mut total = 0.0;
        let mut saved = Vec::with_capacity(pairs.len());
        for &(f, k) in pairs {
            let (vf, vk) = (self.value(f), self.value(k));
            if vf.shape() != vk.shape() {
                return Err(dim_err("l2_alignment", vf.shape(), vk.shape()));
            }
            let tokens = vf.rows();
            if tokens == 0 {
                return Err(TensorError::Empty("l2_alignment"));
            }
            let sq: f64 = vf.data().iter().zip(vk.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            total += sq / tokens as f64;
            saved.push((k.id, vf.data().to_vec()));
        }
        let loss = total / pairs.len() as f64;
        let requires_grad = saved.iter().any(|(k, _)| self.nodes[*k].requires_grad);
        Ok(self.push_with(Array::scalar(loss), Op::L2Align { pairs: saved }, requires_grad))
    }

    /// `out[i] = sum_e weights[i, e] * experts[e][i]`.
    pub fn weighted_sum(&mut self, weights: Tensor, experts: &[Tensor]) -> Result<Tensor> {
        let vw = self.value(weights);
        if experts.is_empty() || vw.shape().len() != 2 || vw.shape()[1] != experts.len() {
            return Err(dim_err("weighted_sum", vw.shape(), &[experts.len()]));
        }
        let n = vw.shape()[0];
        let e_count = experts.len();
        let first = self.value(experts[0]).shape().to_vec();
        if first.len() != 2 || first[0] != n {
            return Err(dim_err("weighted_sum", vw.shape(), &first));
        }
        let d = first[1];
        let mut out = vec![0.0; n * d];
        for (e, &x) in experts.iter().enumerate() {
            let vx = self.value(x);
            if vx.shape() != first.as_slice() {
                return Err(dim_err("weighted_sum", &first, vx.shape()));
            }
            for i in 0..n {
                let w = vw.data()[i * e_count + e];
                let src = vx.row(i);
                for (o, s) in out[i * d..(i + 1) * d].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let value = Array::new(vec![n, d], out)?;
        Ok(self.push(
            value,
            Op::WeightedSum {
                weights: weights.id,
                experts: experts.iter().map(|t| t.id).collect(),
            },
        ))
    }

    // -------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`; gradients accumulate into every
    /// node that requires one.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.nodes[loss.id].requires_grad {
            return Ok(());
        }
        match &mut self.nodes[loss.id].grad {
            Some(g) => g[0] += 1.0,
            slot @ None => *slot = Some(vec![1.0]),
        }
        for i in (0..=loss.id).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(grad) = node.grad.as_deref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            backprop(before, node, grad);
        }
        Ok(())
    }

    /// Adds the gradients of bound trainable parameters into `store`.
    /// A trainable parameter bound but never reached gets a zero gradient.
    pub fn write_grads(&self, store: &mut ParameterStore) -> Result<()> {
        for (name, id) in &self.bound {
            let node = &self.nodes[*id];
            if !node.requires_grad {
                continue;
            }
            match &node.grad {
                Some(g) => store.accumulate_grad(name, g)?,
                None => store.accumulate_grad(name, &vec![0.0; node.value.len()])?,
            }
        }
        Ok(())
    }
}

/// Accumulates into a parent's gradient, allocating it on first use.
fn acc(nodes: &mut [Node], id: usize) -> Option<&mut [f64]> {
    let node = &mut nodes[id];
    if !node.requires_grad {
        return None;
    }
    let len = node.value.len();
    Some(node.grad.get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
}

fn backprop(nodes: &mut [Node], node: &Node, g: &[f64]) {
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            let n = nodes[*b].value.shape()[1];
            if nodes[*a].requires_grad {
                let bv = nodes[*b].value.data().to_vec();
                let ga = acc(nodes, *a).unwrap();
                ops::matmul_nt_acc(ga, g, &bv, m, n, k);
            }
            if nodes[*b].requires_grad {
                let av = nodes[*a].value.data().to_vec();
                let gb = acc(nodes, *b).unwrap();
                ops::matmul_tn_acc(gb, &av, g, m, k, n);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (nodes[*a].value.shape()[0], nodes[*a].value.shape()[1]);
            if let Some(ga) = acc(nodes, *a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Add(a, b, kind) => {
            if let Some(ga) = acc(nodes, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = acc(nodes, *b) {
                match kind {
                    Broadcast::Same => add_into(gb, g),
                    Broadcast::Row => {
                        let d = gb.len();
                        for row in g.chunks(d) {
                            add_into(gb, row);
                        }
                    }
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = acc(nodes, *a) {
                add_into(ga, g);
            }
            if let Some(gb) = acc(nodes, *b) {
                for (x, y) in gb.iter_mut().zip(g) {
                    *x -= y;
                }
            }
        }
        Op::Mul(a, b, kind) => {
            let av = nodes[*a].value.data().to_vec();
            let bv = nodes[*b].value.data().to_vec();
            let d = bv.len();
            if let Some(ga) = acc(nodes, *a) {
                for (i, (x, gi)) in ga.iter_mut().zip(g).enumerate() {
                    let bj = match kind {
                        Broadcast::Same => bv[i],
                        Broadcast::Row => bv[i % d],
                    };
                    *x += gi * bj;
                }
            }
            if let Some(gb) = acc(nodes, *b) {
                match kind {
                    Broadcast::Same => {
                        for ((x, gi), ai) in gb.iter_mut().zip(g).zip(&av) {
                            *x += gi * ai;
                        }
                    }
                    Broadcast::Row => {
                        for (i, (gi, ai)) in g.iter().zip(&av).enumerate() {
                            gb[i % d] += gi * ai;
                        }
                    }
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = acc(nodes, *a) {
                for (x, gi) in ga.iter_mut().zip(g) {
                    *x += gi * s;
                }
            }
        }
        Op::MulConst(a, factor) => {
            if let Some(ga) = acc(nodes, *a) {
                for ((x, gi), f) in ga.iter_mut().zip(g).zip(factor) {
                    *x += gi * f;
                }
            }
        }
        Op::Relu(a) => {
            let av = nodes[*a].value.data().to_vec();
            if let Some(ga) = acc(nodes, *a) {
                for ((x, gi), xi) in ga.iter_mut().zip(g).zip(&av) {
                    if *xi > 0.0 {
                        *x += gi;
                    }
                }
            }
        }
        Op::Gelu(a) => {
            let av = nodes[*a].value.data().to_vec();
            if let Some(ga) = acc(nodes, *a) {
                for ((x, gi), xi) in ga.iter_mut().zip(g).zip(&av) {
                    *x += gi * ops::gelu_grad(*xi);
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            if let Some(ga) = acc(nodes, *a) {
                for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi * yi * (1.0 - yi);
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(ga) = acc(nodes, *a) {
                add_into(ga, g);
            }
        }
        Op::SumAll(a) => {
            if let Some(ga) = acc(nodes, *a) {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }
        }
        Op::MeanAll(a) => {
            if let Some(ga) = acc(nodes, *a) {
                let s = g[0] / ga.len() as f64;
                for x in ga.iter_mut() {
                    *x += s;
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let gv = nodes[*gain].value.data().to_vec();
            let d = gv.len();
            if let Some(gb) = acc(nodes, *bias) {
                for row in g.chunks(d) {
                    add_into(gb, row);
                }
            }
            if let Some(gg) = acc(nodes, *gain) {
                for (row, h) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        gg[j] += row[j] * h[j];
                    }
                }
            }
            if let Some(gx) = acc(nodes, *x) {
                let mut dh = vec![0.0; d];
                for (r, (row, h)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    for j in 0..d {
                        dh[j] = row[j] * gv[j];
                    }
                    let mean_dh = dh.iter().sum::<f64>() / d as f64;
                    let mean_dh_h = dh.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    let out = &mut gx[r * d..(r + 1) * d];
                    for j in 0..d {
                        out[j] += rstd[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                    }
                }
            }
        }
        Op::Softmax(a) => {
            let y = node.value.data();
            let d = node.value.last_dim();
            if let Some(ga) = acc(nodes, *a) {
                for ((out, gr), yr) in ga.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        out[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::GatherRows(a, rows) => {
            let d = node.value.last_dim();
            if let Some(ga) = acc(nodes, *a) {
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut ga[r * d..(r + 1) * d], &g[i * d..(i + 1) * d]);
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            probs,
            batch,
            seq,
            heads,
        } => {
            let (batch, seq, heads) = (*batch, *seq, *heads);
            let d = node.value.last_dim();
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let qv = nodes[*q].value.data().to_vec();
            let kv = nodes[*k].value.data().to_vec();
            let vv = nodes[*v].value.data().to_vec();
            let mut gq = vec![0.0; qv.len()];
            let mut gk = vec![0.0; kv.len()];
            let mut gvv = vec![0.0; vv.len()];
            let mut dp = vec![0.0; seq];
            for b in 0..batch {
                for h in 0..heads {
                    let off = h * dh;
                    for t in 0..seq {
                        let prow = &probs[((b * heads + h) * seq + t) * seq..][..seq];
                        let oi = (b * seq + t) * d + off;
                        let go = &g[oi..oi + dh];
                        for s in 0..seq {
                            let vi = (b * seq + s) * d + off;
                            dp[s] = (0..dh).map(|j| go[j] * vv[vi + j]).sum();
                            if prow[s] != 0.0 {
                                for j in 0..dh {
                                    gvv[vi + j] += prow[s] * go[j];
                                }
                            }
                        }
                        let dot: f64 = prow.iter().zip(&dp).map(|(p, x)| p * x).sum();
                        for s in 0..seq {
                            let ds = prow[s] * (dp[s] - dot) * scale;
                            if ds == 0.0 {
                                continue;
                            }
                            let ki = (b * seq + s) * d + off;
                            for j in 0..dh {
                                gq[oi + j] += ds * kv[ki + j];
                                gk[ki + j] += ds * qv[oi + j];
                            }
                        }
                    }
                }
            }
            if let Some(x) = acc(nodes, *q) {
                add_into(x, &gq);
            }
            if let Some(x) = acc(nodes, *k) {
                add_into(x, &gk);
            }
            if let Some(x) = acc(nodes, *v) {
                add_into(x, &gvv);
            }
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
            count,
        } => {
            let classes = nodes[*logits].value.last_dim();
            let s = g[0] / *count as f64;
            if let Some(gl) = acc(nodes, *logits) {
                for (r, &label) in labels.iter().enumerate() {
                    if label == IGNORE_INDEX {
                        continue;
                    }
                    let row = &mut gl[r * classes..(r + 1) * classes];
                    for (j, x) in row.iter_mut().enumerate() {
                        let target = if j == label as usize { 1.0 } else { 0.0 };
                        *x += s * (probs[r * classes + j] - target);
                    }
                }
            }
        }
        Op::Mse { pred, target } => {
            let pv = nodes[*pred].value.data().to_vec();
            let s = 2.0 * g[0] / target.len() as f64;
            if let Some(gp) = acc(nodes, *pred) {
                for ((x, p), t) in gp.iter_mut().zip(&pv).zip(target) {
                    *x += s * (p - t);
                }
            }
        }
        Op::L2Align { pairs } => {
            let layers = pairs.len() as f64;
            for (k, f) in pairs {
                let kv = nodes[*k].value.data().to_vec();
                let tokens = nodes[*k].value.rows() as f64;
                let s = 2.0 * g[0] / (layers * tokens);
                if let Some(gk) = acc(nodes, *k) {
                    for ((x, kj), fj) in gk.iter_mut().zip(&kv).zip(f) {
                        *x += s * (kj - fj);
                    }
                }
            }
        }
        Op::WeightedSum { weights, experts } => {
            let e_count = experts.len();
            let d = node.value.last_dim();
            let n = node.value.rows();
            let wv = nodes[*weights].value.data().to_vec();
            if nodes[*weights].requires_grad {
                let mut gw = vec![0.0; wv.len()];
                for (e, &x) in experts.iter().enumerate() {
                    let xv = nodes[x].value.data();
                    for i in 0..n {
                        gw[i * e_count + e] += g[i * d..(i + 1) * d]
                            .iter()
                            .zip(&xv[i * d..(i + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                add_into(acc(nodes, *weights).unwrap(), &gw);
            }
            for (e, &x) in experts.iter().enumerate() {
                if let Some(gx) = acc(nodes, x) {
                    for i in 0..n {
                        let w = wv[i * e_count + e];
                        for (o, gi) in gx[i * d..(i + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]) {
                            *o += w * gi;
                        }
                    }
                }
            }
        }
    }
}
