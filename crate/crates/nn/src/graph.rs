//! Tape of matrix operations with reverse-mode gradients.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid topological order for backpropagation. Parameters are read straight
//! from the borrowed [`ParamStore`]; their gradients come back as
//! [`Gradients`] and the store is updated afterwards by an optimizer.

use ndarray::{s, Array2, Axis};

use crate::{Gradients, Matrix, NnError, ParamId, ParamStore, Result};

/// Node handle inside one [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A block of query rows attending to a block of key rows.
///
/// Packed batches use one segment per sequence so that attention never
/// crosses sequence boundaries.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_len: usize,
}

impl Segment {
    pub fn new(q_start: usize, q_len: usize, k_start: usize, k_len: usize) -> Self {
        Self {
            q_start,
            q_len,
            k_start,
            k_len,
        }
    }

    /// Segment for self-attention over rows `start..start + len`.
    pub fn square(start: usize, len: usize) -> Self {
        Self::new(start, len, start, len)
    }
}

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Softmax(Var),
    LogSoftmaxGather {
        logits: Var,
        targets: Vec<usize>,
        probs: Matrix,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    Conv1d {
        x: Var,
        weight: Var,
        bias: Var,
        width: usize,
        cols: Matrix,
    },
    MaxOverTime(Var, Vec<usize>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<Segment>,
        probs: Vec<Matrix>,
    },
    Sum(Var),
    Mean(Var),
    BceWithLogits(Var, Vec<f64>),
}

enum Value {
    Owned(Matrix),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(NnError::shape(op, a, b));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.mapv_inplace(|v| v / total);
    }
    out
}

/// Row-wise log-softmax of a logit matrix, outside of any graph.
pub fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

const LAYER_NORM_EPS: f64 = 1e-5;

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        match &self.nodes[v.0].value {
            Value::Owned(m) => m,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies a node's value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ncols() != bv.nrows() {
            return Err(NnError::shape("matmul", av, bv));
        }
        let out = av.dot(bv);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("add", av, bv)?;
        let out = av + bv;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a 1xN row to every row of an MxN matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.nrows() != 1 || rv.ncols() != av.ncols() {
            return Err(NnError::shape("add_row", av, rv));
        }
        let out = av + rv;
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same("mul", av, bv)?;
        let out = av * bv;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        self.push(out, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::Softmax(a))
    }

    /// Log-probability of `targets[r]` under the softmax of row `r`, as an Nx1 column.
    pub fn log_softmax_gather(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.nrows() != targets.len() {
            return Err(NnError::invalid(
                "log_softmax_gather",
                format!("{} rows but {} targets", lv.nrows(), targets.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= lv.ncols()) {
            return Err(NnError::invalid(
                "log_softmax_gather",
                format!("target {t} out of range for {} classes", lv.ncols()),
            ));
        }
        let logp = log_softmax_rows(lv);
        let out = Array2::from_shape_fn((targets.len(), 1), |(r, _)| logp[[r, targets[r]]]);
        let probs = logp.mapv(f64::exp);
        Ok(self.push(
            out,
            Op::LogSoftmaxGather {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// Per-row layer normalisation with learned 1xN gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        if gv.dim() != (1, xv.ncols()) {
            return Err(NnError::shape("layer_norm", xv, gv));
        }
        if bv.dim() != (1, xv.ncols()) {
            return Err(NnError::shape("layer_norm", xv, bv));
        }
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * gv + bv;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    /// Selects rows by index; with a parameter table this is an embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= tv.nrows()) {
            return Err(NnError::invalid(
                "gather_rows",
                format!("row {bad} out of range for {} rows", tv.nrows()),
            ));
        }
        let mut out = Array2::zeros((ids.len(), tv.ncols()));
        for (r, &i) in ids.iter().enumerate() {
            out.row_mut(r).assign(&tv.row(i));
        }
        Ok(self.push(out, Op::GatherRows(table, ids.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::invalid("concat_cols", "no inputs"))?;
        let rows = self.value(*first).nrows();
        for p in parts {
            let pv = self.value(*p);
            if pv.nrows() != rows {
                return Err(NnError::shape("concat_cols", self.value(*first), pv));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| NnError::invalid("concat_cols", e.to_string()))?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| NnError::invalid("concat_rows", "no inputs"))?;
        let cols = self.value(*first).ncols();
        for p in parts {
            let pv = self.value(*p);
            if pv.ncols() != cols {
                return Err(NnError::shape("concat_rows", self.value(*first), pv));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| NnError::invalid("concat_rows", e.to_string()))?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.ncols() {
            return Err(NnError::invalid(
                "slice_cols",
                format!("{start}+{len} exceeds {} columns", av.ncols()),
            ));
        }
        let out = av.slice(s![.., start..start + len]).to_owned();
        Ok(self.push(out, Op::SliceCols(a, start, len)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.nrows() {
            return Err(NnError::invalid(
                "slice_rows",
                format!("{start}+{len} exceeds {} rows", av.nrows()),
            ));
        }
        let out = av.slice(s![start..start + len, ..]).to_owned();
        Ok(self.push(out, Op::SliceRows(a, start, len)))
    }

    /// Valid 1-D convolution over the rows of `x` (one token per row).
    ///
    /// `weight` is `(width * d) x channels`, `bias` is `1 x channels`. Inputs
    /// shorter than `width` are zero-padded at the end so at least one window
    /// exists.
    pub fn conv1d(&mut self, x: Var, weight: Var, bias: Var, width: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(weight), self.value(bias));
        let d = xv.ncols();
        if width == 0 || wv.nrows() != width * d {
            return Err(NnError::shape("conv1d", xv, wv));
        }
        if bv.dim() != (1, wv.ncols()) {
            return Err(NnError::shape("conv1d", wv, bv));
        }
        let len = xv.nrows().max(width);
        let windows = len - width + 1;
        let mut cols = Array2::zeros((windows, width * d));
        for t in 0..windows {
            for j in 0..width {
                let src = t + j;
                if src < xv.nrows() {
                    cols.slice_mut(s![t, j * d..(j + 1) * d])
                        .assign(&xv.row(src));
                }
            }
        }
        let out = cols.dot(wv) + bv;
        Ok(self.push(
            out,
            Op::Conv1d {
                x,
                weight,
                bias,
                width,
                cols,
            },
        ))
    }

    /// Column-wise maximum over rows, producing a 1xN row.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.nrows() == 0 {
            return Err(NnError::invalid("max_over_time", "empty input"));
        }
        let mut arg = vec![0usize; av.ncols()];
        let mut out = Array2::zeros((1, av.ncols()));
        for c in 0..av.ncols() {
            let mut best = f64::NEG_INFINITY;
            for r in 0..av.nrows() {
                if av[[r, c]] > best {
                    best = av[[r, c]];
                    arg[c] = r;
                }
            }
            out[[0, c]] = best;
        }
        Ok(self.push(out, Op::MaxOverTime(a, arg)))
    }

    /// Multi-head scaled dot-product attention over packed segments.
    ///
    /// `q` is `N x d`, `k` and `v` are `M x d`. Query rows outside every
    /// segment produce zeros. With `causal`, query `i` of a segment only sees
    /// keys `0..=i` of the same segment.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[Segment],
        causal: bool,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        if kv.ncols() != d {
            return Err(NnError::shape("attention", qv, kv));
        }
        if vv.dim() != kv.dim() {
            return Err(NnError::shape("attention", kv, vv));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NnError::invalid(
                "attention",
                format!("width {d} not divisible into {heads} heads"),
            ));
        }
        for seg in segments {
            if seg.q_start + seg.q_len > qv.nrows() || seg.k_start + seg.k_len > kv.nrows() {
                return Err(NnError::invalid("attention", format!("segment {seg:?} out of range")));
            }
            if seg.k_len == 0 && seg.q_len > 0 {
                return Err(NnError::invalid("attention", "segment with no keys"));
            }
            if causal && seg.q_len > seg.k_len {
                return Err(NnError::invalid(
                    "attention",
                    "causal segment needs at least as many keys as queries",
                ));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(segments.len() * heads);
        for seg in segments {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![seg.q_start..seg.q_start + seg.q_len, cols.clone()]);
                let kh = kv.slice(s![seg.k_start..seg.k_start + seg.k_len, cols.clone()]);
                let vh = vv.slice(s![seg.k_start..seg.k_start + seg.k_len, cols.clone()]);
                let mut scores = qh.dot(&kh.t()) * scale;
                if causal {
                    for i in 0..seg.q_len {
                        for j in (i + 1)..seg.k_len {
                            scores[[i, j]] = f64::NEG_INFINITY;
                        }
                    }
                }
                let p = softmax_rows(&scores);
                out.slice_mut(s![seg.q_start..seg.q_start + seg.q_len, cols])
                    .assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                segments: segments.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let m = av.sum() / av.len().max(1) as f64;
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a))
    }

    /// Mean binary cross-entropy of an Nx1 logit column against 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.ncols() != 1 || lv.nrows() != labels.len() {
            return Err(NnError::invalid(
                "bce_with_logits",
                format!("logits {:?} vs {} labels", lv.dim(), labels.len()),
            ));
        }
        let n = labels.len().max(1) as f64;
        let total: f64 = lv
            .column(0)
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(
            Array2::from_elem((1, 1), total / n),
            Op::BceWithLogits(logits, labels.to_vec()),
        ))
    }

    /// Backpropagates from a 1x1 loss and collects parameter gradients.
    ///
    /// Parameters marked non-trainable in the store get no gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(NnError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients::new(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut send = |v: Var, delta: Matrix| match &mut grads[v.0] {
                Some(acc) => *acc += &delta,
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    if self.store.is_trainable(*id) {
                        out.accumulate(*id, &g);
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    send(*a, da);
                    send(*b, db);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::AddRow(a, row) => {
                    let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    send(*a, g);
                    send(*row, dr);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    send(*a, da);
                    send(*b, db);
                }
                Op::Scale(a, f) => send(*a, g * *f),
                Op::Sigmoid(a) => {
                    let y = self.value(Var(idx));
                    send(*a, &g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(idx));
                    send(*a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    d.zip_mut_with(x, |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    send(*a, d);
                }
                Op::Exp(a) => {
                    let y = self.value(Var(idx));
                    send(*a, &g * y);
                }
                Op::Softmax(a) => {
                    let y = self.value(Var(idx));
                    let mut d = &g * y;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.sum();
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv -= yv * dot);
                    }
                    send(*a, d);
                }
                Op::LogSoftmaxGather {
                    logits,
                    targets,
                    probs,
                } => {
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        let gr = g[[r, 0]];
                        let mut row = d.row_mut(r);
                        row.mapv_inplace(|p| -p * gr);
                        row[t] += gr;
                    }
                    send(*logits, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    let dgamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gv;
                    let n = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dxr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let mean_d = dxr.sum() / n;
                        let mean_dx = dxr.iter().zip(xr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                        let is = inv_std[r];
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = is * (dxr[c] - mean_d - xr[c] * mean_dx);
                        }
                    }
                    send(*x, dx);
                    send(*gamma, dgamma);
                    send(*beta, dbeta);
                }
                Op::GatherRows(table, ids) => {
                    let tv = self.value(*table);
                    let mut d = Array2::zeros(tv.dim());
                    for (r, &i) in ids.iter().enumerate() {
                        let mut dst = d.row_mut(i);
                        dst += &g.row(r);
                    }
                    send(*table, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        send(*p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        send(*p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    send(*a, d);
                }
                Op::SliceRows(a, start, len) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    d.slice_mut(s![*start..*start + *len, ..]).assign(&g);
                    send(*a, d);
                }
                Op::Conv1d {
                    x,
                    weight,
                    bias,
                    width,
                    cols,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*weight);
                    let d = xv.ncols();
                    let dw = cols.t().dot(&g);
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dcols = g.dot(&wv.t());
                    let mut dx = Array2::zeros(xv.dim());
                    for t in 0..dcols.nrows() {
                        for j in 0..*width {
                            let src = t + j;
                            if src < xv.nrows() {
                                let mut dst = dx.row_mut(src);
                                dst += &dcols.slice(s![t, j * d..(j + 1) * d]);
                            }
                        }
                    }
                    send(*x, dx);
                    send(*weight, dw);
                    send(*bias, db);
                }
                Op::MaxOverTime(a, arg) => {
                    let mut d = Array2::zeros(self.value(*a).dim());
                    for (c, &r) in arg.iter().enumerate() {
                        d[[r, c]] = g[[0, c]];
                    }
                    send(*a, d);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    segments,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros(qv.dim());
                    let mut dk = Array2::zeros(kv.dim());
                    let mut dv = Array2::zeros(vv.dim());
                    let mut pi = 0;
                    for seg in segments {
                        let qr = seg.q_start..seg.q_start + seg.q_len;
                        let kr = seg.k_start..seg.k_start + seg.k_len;
                        for h in 0..*heads {
                            let cols = h * dh..(h + 1) * dh;
                            let p = &probs[pi];
                            pi += 1;
                            let go = g.slice(s![qr.clone(), cols.clone()]);
                            let qh = qv.slice(s![qr.clone(), cols.clone()]);
                            let kh = kv.slice(s![kr.clone(), cols.clone()]);
                            let vh = vv.slice(s![kr.clone(), cols.clone()]);
                            let dvh = p.t().dot(&go);
                            let dp = go.dot(&vh.t());
                            let mut ds = &dp * p;
                            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                                let dot: f64 = row.sum();
                                row.zip_mut_with(&prow, |x, &pv| *x -= pv * dot);
                            }
                            ds *= scale;
                            let dqh = ds.dot(&kh);
                            let dkh = ds.t().dot(&qh);
                            let mut t = dq.slice_mut(s![qr.clone(), cols.clone()]);
                            t += &dqh;
                            let mut t = dk.slice_mut(s![kr.clone(), cols.clone()]);
                            t += &dkh;
                            let mut t = dv.slice_mut(s![kr.clone(), cols]);
                            t += &dvh;
                        }
                    }
                    send(*q, dq);
                    send(*k, dk);
                    send(*v, dv);
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).dim();
                    send(*a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::Mean(a) => {
                    let shape = self.value(*a).dim();
                    let n = (shape.0 * shape.1).max(1) as f64;
                    send(*a, Array2::from_elem(shape, g[[0, 0]] / n));
                }
                Op::BceWithLogits(logits, labels) => {
                    let lv = self.value(*logits);
                    let n = labels.len().max(1) as f64;
                    let gs = g[[0, 0]];
                    let d = Array2::from_shape_fn(lv.dim(), |(r, _)| {
                        (sigmoid(lv[[r, 0]]) - labels[r]) * gs / n
                    });
                    send(*logits, d);
                }
            }
        }
        Ok(out)
    }
}
