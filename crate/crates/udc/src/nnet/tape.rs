//! Trace-based reverse-mode differentiation over the fixed op set the
//! policies need. A fresh tape is created per training step and dropped
//! afterwards, so no state leaks across steps. Inference uses the same
//! forward path and simply never calls `backward`.

use super::tensor::{sigmoid, silu, Tensor};
use crate::error::{Result, UdcError};
use std::collections::BTreeMap;

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics (training).
    Batch,
    /// Normalize with frozen running statistics (inference).
    Running,
}

/// Batch statistics exported by a train-mode batch-norm op so the caller can
/// update running buffers.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Op {
    Leaf,
    Param(String),
    Matmul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    AddRowBroadcast(ValueId, ValueId),
    Scale(ValueId, f64),
    AddConst(ValueId),
    Silu(ValueId),
    Sigmoid(ValueId),
    Hadamard(ValueId, ValueId),
    GatherRows(ValueId, Vec<usize>),
    ScatterMean {
        src: ValueId,
        dst: Vec<usize>,
        counts: Vec<usize>,
    },
    MeanRows(ValueId),
    ConcatCols(ValueId, ValueId),
    Transpose(ValueId),
    SumAll(ValueId),
    BatchNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        xhat: Tensor,
        inv_std: Vec<f64>,
        mode: BnMode,
    },
    RowFromSparse {
        scores: ValueId,
        index_map: Vec<Option<usize>>,
    },
    MaskedLogSoftmaxPick {
        logits: ValueId,
        mask: Vec<bool>,
        pick: usize,
        probs: Vec<f64>,
    },
    WeightedSum(Vec<(ValueId, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(context: &str, expected: String, got: String) -> UdcError {
    UdcError::ShapeMismatch {
        context: context.to_string(),
        expected,
        got,
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> ValueId {
        self.push(t, Op::Leaf)
    }

    /// Register a named parameter leaf; gradients accumulate under its name.
    pub fn param(&mut self, name: &str, t: Tensor) -> ValueId {
        self.push(t, Op::Param(name.to_string()))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.cols != tb.rows {
            return Err(shape_err(
                "matmul",
                format!("inner dims equal ({}x{})", ta.rows, ta.cols),
                format!("{}x{}", tb.rows, tb.cols),
            ));
        }
        let v = ta.matmul(tb);
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "sub",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// `a + b` with `b` a single row broadcast over the rows of `a`.
    pub fn add_row_broadcast(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if tb.rows != 1 || tb.cols != ta.cols {
            return Err(shape_err(
                "add_row_broadcast",
                format!("1x{}", ta.cols),
                format!("{}x{}", tb.rows, tb.cols),
            ));
        }
        let mut v = ta.clone();
        for r in 0..v.rows {
            for c in 0..v.cols {
                v.data[r * v.cols + c] += tb.data[c];
            }
        }
        Ok(self.push(v, Op::AddRowBroadcast(a, b)))
    }

    pub fn scale(&mut self, a: ValueId, s: f64) -> ValueId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x * s).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: ValueId, c: f64) -> ValueId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|x| x + c).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::AddConst(a))
    }

    pub fn silu(&mut self, a: ValueId) -> ValueId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| silu(x)).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| sigmoid(x)).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn hadamard(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(
                "hadamard",
                format!("{:?}", ta.shape()),
                format!("{:?}", tb.shape()),
            ));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let v = Tensor::from_vec(ta.rows, ta.cols, data);
        Ok(self.push(v, Op::Hadamard(a, b)))
    }

    /// Select rows of `a` by index; repeated indices allowed.
    pub fn gather_rows(&mut self, a: ValueId, idx: &[usize]) -> ValueId {
        let ta = &self.nodes[a.0].value;
        let mut v = Tensor::zeros(idx.len(), ta.cols);
        for (r, &i) in idx.iter().enumerate() {
            v.data[r * ta.cols..(r + 1) * ta.cols].copy_from_slice(ta.row(i));
        }
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Mean-aggregate rows of `src` into `out_rows` buckets given by `dst`.
    /// Empty buckets produce zero rows.
    pub fn scatter_mean(&mut self, src: ValueId, dst: &[usize], out_rows: usize) -> ValueId {
        let ts = &self.nodes[src.0].value;
        let mut counts = vec![0usize; out_rows];
        for &d in dst {
            counts[d] += 1;
        }
        let mut v = Tensor::zeros(out_rows, ts.cols);
        for (r, &d) in dst.iter().enumerate() {
            for c in 0..ts.cols {
                v.data[d * ts.cols + c] += ts.data[r * ts.cols + c];
            }
        }
        for d in 0..out_rows {
            if counts[d] > 0 {
                let inv = 1.0 / counts[d] as f64;
                for c in 0..ts.cols {
                    v.data[d * ts.cols + c] *= inv;
                }
            }
        }
        self.push(
            v,
            Op::ScatterMean {
                src,
                dst: dst.to_vec(),
                counts,
            },
        )
    }

    pub fn mean_rows(&mut self, a: ValueId) -> ValueId {
        let ta = &self.nodes[a.0].value;
        let mut v = Tensor::zeros(1, ta.cols);
        for r in 0..ta.rows {
            for c in 0..ta.cols {
                v.data[c] += ta.data[r * ta.cols + c];
            }
        }
        let inv = 1.0 / ta.rows.max(1) as f64;
        for c in 0..ta.cols {
            v.data[c] *= inv;
        }
        self.push(v, Op::MeanRows(a))
    }

    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rows != tb.rows {
            return Err(shape_err(
                "concat_cols",
                format!("{} rows", ta.rows),
                format!("{} rows", tb.rows),
            ));
        }
        let mut v = Tensor::zeros(ta.rows, ta.cols + tb.cols);
        for r in 0..ta.rows {
            v.data[r * v.cols..r * v.cols + ta.cols].copy_from_slice(ta.row(r));
            v.data[r * v.cols + ta.cols..(r + 1) * v.cols].copy_from_slice(tb.row(r));
        }
        Ok(self.push(v, Op::ConcatCols(a, b)))
    }

    pub fn transpose(&mut self, a: ValueId) -> ValueId {
        let v = self.nodes[a.0].value.transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum_all(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Batch normalization over rows, one statistic per column.
    /// In `Batch` mode the second return value carries the batch statistics
    /// for the caller's running-buffer update.
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &[f64],
        running_var: &[f64],
        mode: BnMode,
        prefix: &str,
    ) -> Result<(ValueId, Option<BnBatchStats>)> {
        let tx = &self.nodes[x.0].value;
        let (rows, cols) = tx.shape();
        let tg = &self.nodes[gamma.0].value;
        if tg.cols != cols || self.nodes[beta.0].value.cols != cols {
            return Err(shape_err(
                "batch_norm",
                format!("gamma/beta 1x{cols}"),
                format!("{:?}", tg.shape()),
            ));
        }
        let (mean, var) = match mode {
            BnMode::Batch => {
                let mut mean = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        mean[c] += tx.data[r * cols + c];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= rows as f64;
                }
                let mut var = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let d = tx.data[r * cols + c] - mean[c];
                        var[c] += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= rows as f64;
                }
                (mean, var)
            }
            BnMode::Running => (running_mean.to_vec(), running_var.to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                xhat.data[r * cols + c] = (tx.data[r * cols + c] - mean[c]) * inv_std[c];
            }
        }
        let mut out = Tensor::zeros(rows, cols);
        let tb = &self.nodes[beta.0].value;
        let tg = &self.nodes[gamma.0].value;
        for r in 0..rows {
            for c in 0..cols {
                out.data[r * cols + c] = tg.data[c] * xhat.data[r * cols + c] + tb.data[c];
            }
        }
        let stats = match mode {
            BnMode::Batch => Some(BnBatchStats {
                prefix: prefix.to_string(),
                mean: mean.clone(),
                var: var.clone(),
            }),
            BnMode::Running => None,
        };
        let id = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                mode,
            },
        );
        Ok((id, stats))
    }

    /// Expand sparse per-edge scores into a dense logits row; positions
    /// without an edge get `default`.
    pub fn row_from_sparse(
        &mut self,
        scores: ValueId,
        index_map: &[Option<usize>],
        default: f64,
    ) -> Result<ValueId> {
        let ts = &self.nodes[scores.0].value;
        if ts.cols != 1 {
            return Err(shape_err(
                "row_from_sparse",
                "column vector".into(),
                format!("{:?}", ts.shape()),
            ));
        }
        let mut v = Tensor::filled(1, index_map.len(), default);
        for (j, slot) in index_map.iter().enumerate() {
            if let Some(e) = slot {
                v.data[j] = ts.data[*e];
            }
        }
        Ok(self.push(
            v,
            Op::RowFromSparse {
                scores,
                index_map: index_map.to_vec(),
            },
        ))
    }

    /// Log-probability of picking `pick` from a masked softmax over a logits
    /// row; numerically stable (subtracts the row max over the unmasked set).
    pub fn masked_log_softmax_pick(
        &mut self,
        logits: ValueId,
        mask: &[bool],
        pick: usize,
    ) -> Result<ValueId> {
        let tl = &self.nodes[logits.0].value;
        if tl.rows != 1 || tl.cols != mask.len() {
            return Err(shape_err(
                "masked_log_softmax_pick",
                format!("1x{}", mask.len()),
                format!("{:?}", tl.shape()),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(UdcError::InvalidParams(
                "all-masked softmax row".into(),
            ));
        }
        if !mask[pick] {
            return Err(UdcError::InvalidParams(format!(
                "picked masked action {pick}"
            )));
        }
        let maxv = tl
            .data
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        let mut probs = vec![0.0; mask.len()];
        for j in 0..mask.len() {
            if mask[j] {
                probs[j] = (tl.data[j] - maxv).exp();
                z += probs[j];
            }
        }
        for p in probs.iter_mut() {
            *p /= z;
        }
        let logp = (tl.data[pick] - maxv) - z.ln();
        Ok(self.push(
            Tensor::scalar(logp),
            Op::MaskedLogSoftmaxPick {
                logits,
                mask: mask.to_vec(),
                pick,
                probs,
            },
        ))
    }

    /// Masked softmax probabilities as plain numbers (no tape node); the
    /// decode samplers use this to draw actions.
    pub fn masked_softmax_probs(&self, logits: ValueId, mask: &[bool]) -> Result<Vec<f64>> {
        let tl = &self.nodes[logits.0].value;
        if tl.rows != 1 || tl.cols != mask.len() {
            return Err(shape_err(
                "masked_softmax_probs",
                format!("1x{}", mask.len()),
                format!("{:?}", tl.shape()),
            ));
        }
        if !mask.iter().any(|&m| m) {
            return Err(UdcError::InvalidParams("all-masked softmax row".into()));
        }
        let maxv = tl
            .data
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&x, _)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut probs = vec![0.0; mask.len()];
        let mut z = 0.0;
        for j in 0..mask.len() {
            if mask[j] {
                probs[j] = (tl.data[j] - maxv).exp();
                z += probs[j];
            }
        }
        for p in probs.iter_mut() {
            *p /= z;
        }
        Ok(probs)
    }

    /// Scalar `sum_i w_i * v_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(ValueId, f64)]) -> Result<ValueId> {
        let mut s = 0.0;
        for &(id, w) in terms {
            let t = &self.nodes[id.0].value;
            if !t.is_scalar() {
                return Err(shape_err(
                    "weighted_sum",
                    "scalar terms".into(),
                    format!("{:?}", t.shape()),
                ));
            }
            s += w * t.item();
        }
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec())))
    }

    /// Reverse pass from a scalar loss. Returns gradients keyed by parameter
    /// name; parameters never touched by the trace are absent (callers that
    /// need dense gradients fill zeros from their store).
    pub fn backward(&self, loss: ValueId) -> Result<BTreeMap<String, Tensor>> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(shape_err(
                "backward",
                "scalar loss".into(),
                format!("{:?}", lt.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        let mut out = BTreeMap::new();
        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let add_to = |grads: &mut Vec<Option<Tensor>>, id: ValueId, delta: Tensor| {
                match &mut grads[id.0] {
                    Some(t) => {
                        for (a, b) in t.data.iter_mut().zip(&delta.data) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(name) => match out.get_mut(name.as_str()) {
                    Some(t) => {
                        let t: &mut Tensor = t;
                        for (a, b) in t.data.iter_mut().zip(&g.data) {
                            *a += b;
                        }
                    }
                    None => {
                        out.insert(name.clone(), g);
                    }
                },
                Op::Matmul(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    add_to(&mut grads, *a, g.matmul(&tb.transpose()));
                    add_to(&mut grads, *b, ta.transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    add_to(&mut grads, *a, g.clone());
                    add_to(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| -x).collect());
                    add_to(&mut grads, *a, g);
                    add_to(&mut grads, *b, neg);
                }
                Op::AddRowBroadcast(a, b) => {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for c in 0..g.cols {
                            gb.data[c] += g.data[r * g.cols + c];
                        }
                    }
                    add_to(&mut grads, *a, g);
                    add_to(&mut grads, *b, gb);
                }
                Op::Scale(a, s) => {
                    let d = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|x| x * s).collect());
                    add_to(&mut grads, *a, d);
                }
                Op::AddConst(a) => add_to(&mut grads, *a, g),
                Op::Silu(a) => {
                    let ta = &self.nodes[a.0].value;
                    let mut d = g.clone();
                    for (dv, &x) in d.data.iter_mut().zip(&ta.data) {
                        let s = sigmoid(x);
                        *dv *= s + x * s * (1.0 - s);
                    }
                    add_to(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let ty = &self.nodes[i].value;
                    let mut d = g.clone();
                    for (dv, &y) in d.data.iter_mut().zip(&ty.data) {
                        *dv *= y * (1.0 - y);
                    }
                    add_to(&mut grads, *a, d);
                }
                Op::Hadamard(a, b) => {
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect(),
                    );
                    let db = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect(),
                    );
                    add_to(&mut grads, *a, da);
                    add_to(&mut grads, *b, db);
                }
                Op::GatherRows(a, idx) => {
                    let ta = &self.nodes[a.0].value;
                    let mut d = Tensor::zeros(ta.rows, ta.cols);
                    for (r, &src_row) in idx.iter().enumerate() {
                        for c in 0..g.cols {
                            d.data[src_row * g.cols + c] += g.data[r * g.cols + c];
                        }
                    }
                    add_to(&mut grads, *a, d);
                }
                Op::ScatterMean { src, dst, counts } => {
                    let ts = &self.nodes[src.0].value;
                    let mut d = Tensor::zeros(ts.rows, ts.cols);
                    for (r, &bucket) in dst.iter().enumerate() {
                        let inv = 1.0 / counts[bucket] as f64;
                        for c in 0..ts.cols {
                            d.data[r * ts.cols + c] = g.data[bucket * ts.cols + c] * inv;
                        }
                    }
                    add_to(&mut grads, *src, d);
                }
                Op::MeanRows(a) => {
                    let ta = &self.nodes[a.0].value;
                    let inv = 1.0 / ta.rows.max(1) as f64;
                    let mut d = Tensor::zeros(ta.rows, ta.cols);
                    for r in 0..ta.rows {
                        for c in 0..ta.cols {
                            d.data[r * ta.cols + c] = g.data[c] * inv;
                        }
                    }
                    add_to(&mut grads, *a, d);
                }
                Op::ConcatCols(a, b) => {
                    let (ca, cb) = (self.nodes[a.0].value.cols, self.nodes[b.0].value.cols);
                    let rows = g.rows;
                    let mut da = Tensor::zeros(rows, ca);
                    let mut db = Tensor::zeros(rows, cb);
                    for r in 0..rows {
                        da.data[r * ca..(r + 1) * ca]
                            .copy_from_slice(&g.data[r * g.cols..r * g.cols + ca]);
                        db.data[r * cb..(r + 1) * cb]
                            .copy_from_slice(&g.data[r * g.cols + ca..(r + 1) * g.cols]);
                    }
                    add_to(&mut grads, *a, da);
                    add_to(&mut grads, *b, db);
                }
                Op::Transpose(a) => add_to(&mut grads, *a, g.transpose()),
                Op::SumAll(a) => {
                    let ta = &self.nodes[a.0].value;
                    add_to(&mut grads, *a, Tensor::filled(ta.rows, ta.cols, g.item()));
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    mode,
                } => {
                    let (rows, cols) = (g.rows, g.cols);
                    let tg = &self.nodes[gamma.0].value;
                    let mut dgamma = Tensor::zeros(1, cols);
                    let mut dbeta = Tensor::zeros(1, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            dgamma.data[c] += g.data[r * cols + c] * xhat.data[r * cols + c];
                            dbeta.data[c] += g.data[r * cols + c];
                        }
                    }
                    let mut dx = Tensor::zeros(rows, cols);
                    match mode {
                        BnMode::Running => {
                            for r in 0..rows {
                                for c in 0..cols {
                                    dx.data[r * cols + c] =
                                        g.data[r * cols + c] * tg.data[c] * inv_std[c];
                                }
                            }
                        }
                        BnMode::Batch => {
                            // dxhat = g * gamma; dx via the batch-statistics
                            // chain rule with biased variance.
                            let nf = rows as f64;
                            for c in 0..cols {
                                let mut sum_dxhat = 0.0;
                                let mut sum_dxhat_xhat = 0.0;
                                for r in 0..rows {
                                    let dxh = g.data[r * cols + c] * tg.data[c];
                                    sum_dxhat += dxh;
                                    sum_dxhat_xhat += dxh * xhat.data[r * cols + c];
                                }
                                for r in 0..rows {
                                    let dxh = g.data[r * cols + c] * tg.data[c];
                                    dx.data[r * cols + c] = inv_std[c]
                                        * (dxh
                                            - sum_dxhat / nf
                                            - xhat.data[r * cols + c] * sum_dxhat_xhat / nf);
                                }
                            }
                        }
                    }
                    add_to(&mut grads, *x, dx);
                    add_to(&mut grads, *gamma, dgamma);
                    add_to(&mut grads, *beta, dbeta);
                }
                Op::RowFromSparse { scores, index_map } => {
                    let ts = &self.nodes[scores.0].value;
                    let mut d = Tensor::zeros(ts.rows, ts.cols);
                    for (j, slot) in index_map.iter().enumerate() {
                        if let Some(e) = slot {
                            d.data[*e] += g.data[j];
                        }
                    }
                    add_to(&mut grads, *scores, d);
                }
                Op::MaskedLogSoftmaxPick {
                    logits,
                    mask,
                    pick,
                    probs,
                } => {
                    let gs = g.item();
                    let n = mask.len();
                    let mut d = Tensor::zeros(1, n);
                    for j in 0..n {
                        if mask[j] {
                            let indicator = if j == *pick { 1.0 } else { 0.0 };
                            d.data[j] = gs * (indicator - probs[j]);
                        }
                    }
                    add_to(&mut grads, *logits, d);
                }
                Op::WeightedSum(terms) => {
                    let gs = g.item();
                    for &(id, w) in terms {
                        add_to(&mut grads, id, Tensor::scalar(gs * w));
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::from_vec(1, 2, vec![0.0, 0.0]));
        let p = tape.masked_softmax_probs(l, &[true, true]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn mask_removes_dominating_logit() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::from_vec(1, 3, vec![1.0, 100.0, 1.0]));
        let p = tape.masked_softmax_probs(l, &[true, false, true]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
        assert!((p[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn all_masked_row_is_an_error() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::from_vec(1, 2, vec![0.0, 0.0]));
        assert!(tape.masked_softmax_probs(l, &[false, false]).is_err());
        assert!(tape.masked_log_softmax_pick(l, &[false, false], 0).is_err());
    }

    #[test]
    fn quadratic_gradient_is_2w() {
        let mut tape = Tape::new();
        let w = Tensor::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]);
        let wid = tape.param("w", w.clone());
        let sq = tape.hadamard(wid, wid).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        let gw = &grads["w"];
        for (g, x) in gw.data.iter().zip(&w.data) {
            assert!((g - 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn untouched_parameter_gets_no_gradient_entry() {
        let mut tape = Tape::new();
        let w = tape.param("w", Tensor::scalar(2.0));
        let _unused = tape.param("unused", Tensor::scalar(5.0));
        let loss = tape.hadamard(w, w).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.contains_key("w"));
        assert!(!grads.contains_key("unused"));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut tape = Tape::new();
        let w = tape.param("w", Tensor::from_vec(1, 2, vec![1.0, 2.0]));
        assert!(tape.backward(w).is_err());
    }

    /// Central-difference oracle over every parameter of a composed graph.
    fn finite_diff_check<F>(params: &BTreeMap<String, Tensor>, f: F)
    where
        F: Fn(&BTreeMap<String, Tensor>, &mut Tape) -> ValueId,
    {
        let mut tape = Tape::new();
        let loss = f(params, &mut tape);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for (name, t) in params {
            for i in 0..t.numel() {
                let mut plus = params.clone();
                plus.get_mut(name).unwrap().data[i] += h;
                let mut tp = Tape::new();
                let lp = f(&plus, &mut tp);
                let mut minus = params.clone();
                minus.get_mut(name).unwrap().data[i] -= h;
                let mut tm = Tape::new();
                let lm = f(&minus, &mut tm);
                let fd = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
                let an = grads.get(name).map_or(0.0, |g| g.data[i]);
                let tol = 1e-5 + 1e-4 * fd.abs();
                assert!(
                    (fd - an).abs() < tol,
                    "{name}[{i}]: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn three_layer_net_matches_finite_differences() {
        let mut rng = crate::rng::stream(31, &[0]);
        use rand::Rng;
        let mut params = BTreeMap::new();
        let rnd = |r: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random::<f64>() - 0.5).collect())
        };
        params.insert("w1".into(), rnd(3, 4, &mut rng));
        params.insert("b1".into(), rnd(1, 4, &mut rng));
        params.insert("w2".into(), rnd(4, 4, &mut rng));
        params.insert("gamma".into(), rnd(1, 4, &mut rng));
        params.insert("beta".into(), rnd(1, 4, &mut rng));
        params.insert("w3".into(), rnd(4, 1, &mut rng));
        let x = rnd(5, 3, &mut rng);

        finite_diff_check(&params, move |p, tape| {
            let xid = tape.constant(x.clone());
            let w1 = tape.param("w1", p["w1"].clone());
            let b1 = tape.param("b1", p["b1"].clone());
            let w2 = tape.param("w2", p["w2"].clone());
            let w3 = tape.param("w3", p["w3"].clone());
            let gamma = tape.param("gamma", p["gamma"].clone());
            let beta = tape.param("beta", p["beta"].clone());
            let h1 = tape.matmul(xid, w1).unwrap();
            let h1 = tape.add_row_broadcast(h1, b1).unwrap();
            let h1 = tape.silu(h1);
            let h2 = tape.matmul(h1, w2).unwrap();
            let (h2, _) = tape
                .batch_norm(h2, gamma, beta, &[0.0; 4], &[1.0; 4], BnMode::Batch, "bn")
                .unwrap();
            let gate = tape.sigmoid(h2);
            let h2 = tape.hadamard(gate, h1).unwrap();
            let out = tape.matmul(h2, w3).unwrap();
            tape.sum_all(out)
        });
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let mut rng = crate::rng::stream(37, &[1]);
        use rand::Rng;
        let mut params = BTreeMap::new();
        params.insert(
            "src".into(),
            Tensor::from_vec(4, 3, (0..12).map(|_| rng.random::<f64>()).collect()),
        );
        params.insert(
            "row".into(),
            Tensor::from_vec(3, 1, (0..3).map(|_| rng.random::<f64>()).collect()),
        );
        finite_diff_check(&params, |p, tape| {
            let src = tape.param("src", p["src"].clone());
            let row = tape.param("row", p["row"].clone());
            let gathered = tape.gather_rows(src, &[0, 2, 2, 3, 1]);
            let agg = tape.scatter_mean(gathered, &[0, 1, 1, 0, 1], 2);
            let mean = tape.mean_rows(agg);
            let dense = tape
                .row_from_sparse(row, &[Some(0), None, Some(2), Some(1)], -10.0)
                .unwrap();
            let logp = tape
                .masked_log_softmax_pick(dense, &[true, true, false, true], 0)
                .unwrap();
            let meant = tape.transpose(mean);
            let joined = tape.concat_cols(mean, mean).unwrap();
            let s1 = tape.sum_all(joined);
            let s2 = tape.sum_all(meant);
            tape.weighted_sum(&[(logp, 2.0), (s1, 0.5), (s2, 1.0)]).unwrap()
        });
    }

    #[test]
    fn bn_inference_matches_training_when_stats_agree() {
        let x = Tensor::from_vec(4, 2, vec![1.0, 2.0, 3.0, 5.0, -1.0, 0.5, 2.0, 1.5]);
        // Batch stats of x.
        let mut mean = vec![0.0; 2];
        for r in 0..4 {
            for c in 0..2 {
                mean[c] += x.data[r * 2 + c] / 4.0;
            }
        }
        let mut var = vec![0.0; 2];
        for r in 0..4 {
            for c in 0..2 {
                var[c] += (x.data[r * 2 + c] - mean[c]).powi(2) / 4.0;
            }
        }
        let mut tape = Tape::new();
        let xid = tape.constant(x.clone());
        let gamma = tape.constant(Tensor::from_vec(1, 2, vec![1.5, 0.5]));
        let beta = tape.constant(Tensor::from_vec(1, 2, vec![0.1, -0.2]));
        let (train_out, stats) = tape
            .batch_norm(xid, gamma, beta, &[], &[], BnMode::Batch, "bn")
            .unwrap();
        let stats = stats.unwrap();
        assert!((stats.mean[0] - mean[0]).abs() < 1e-12);
        let (eval_out, none) = tape
            .batch_norm(xid, gamma, beta, &mean, &var, BnMode::Running, "bn")
            .unwrap();
        assert!(none.is_none());
        for (a, b) in tape.value(train_out).data.iter().zip(&tape.value(eval_out).data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
