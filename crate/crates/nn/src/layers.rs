//! Layers built on [`Graph`]: each holds parameter handles and records its
//! forward computation onto a graph.
//!
//! Two layers that hold the same [`ParamId`]s share storage; cloning a layer
//! struct is how weights get shared between models.

use ndarray::Array2;
use rand::Rng;

use crate::graph::{Graph, Segment, Var};
use crate::{init, ParamId, ParamStore, Result};

/// Affine map `x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), init::fan_in_normal(rng, input, output))?;
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, output)))?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Array2::ones((1, dim)))?;
        let beta = store.add(format!("{name}.beta"), Array2::zeros((1, dim)))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Token embedding table, initialised uniformly in `[-0.1, 0.1]`.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add(format!("{name}.table"), init::uniform(rng, vocab, dim, 0.1))?;
        Ok(Self { table, dim })
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let table = g.param(self.table);
        g.gather_rows(table, ids)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng)?,
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng)?,
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng)?,
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng)?,
            heads,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        queries: Var,
        memory: Var,
        segments: &[Segment],
        causal: bool,
    ) -> Result<Var> {
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, memory)?;
        let v = self.value.forward(g, memory)?;
        let mixed = g.attention(q, k, v, self.heads, segments, causal)?;
        self.output.forward(g, mixed)
    }
}

/// Position-wise `relu(x · W1 + b1) · W2 + b2`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            inner: Linear::new(store, &format!("{name}.inner"), dim, hidden, rng)?,
            outer: Linear::new(store, &format!("{name}.outer"), hidden, dim, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.relu(h);
        self.outer.forward(g, h)
    }
}

/// Pre-norm transformer encoder block.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), dim)?,
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ffn_dim, rng)?,
        })
    }

    /// `segments` are square self-attention blocks, one per packed sequence.
    pub fn forward(&self, g: &mut Graph, x: Var, segments: &[Segment]) -> Result<Var> {
        let h = self.attn_norm.forward(g, x)?;
        let h = self.attn.forward(g, h, h, segments, false)?;
        let x = g.add(x, h)?;
        let h = self.ffn_norm.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        g.add(x, h)
    }
}

/// Pre-norm transformer decoder block: causal self-attention, cross-attention, feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl DecoderLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), dim)?,
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, rng)?,
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), dim)?,
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ffn_dim, rng)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        memory: Var,
        self_segments: &[Segment],
        cross_segments: &[Segment],
    ) -> Result<Var> {
        let h = self.self_norm.forward(g, x)?;
        let h = self.self_attn.forward(g, h, h, self_segments, true)?;
        let x = g.add(x, h)?;
        let h = self.cross_norm.forward(g, x)?;
        let h = self.cross_attn.forward(g, h, memory, cross_segments, false)?;
        let x = g.add(x, h)?;
        let h = self.ffn_norm.forward(g, x)?;
        let h = self.ffn.forward(g, h)?;
        g.add(x, h)
    }
}

/// Convolution over token rows followed by ReLU.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        channels: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            init::fan_in_normal(rng, width * input, channels),
        )?;
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, channels)))?;
        Ok(Self {
            weight,
            bias,
            width,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.conv1d(x, w, b, self.width)?;
        Ok(g.relu(y))
    }
}

/// Long short-term memory cell with gates ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_weight: ParamId,
    pub hidden_weight: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let input_weight = store.add(
            format!("{name}.input_weight"),
            init::fan_in_normal(rng, input, 4 * hidden),
        )?;
        let hidden_weight = store.add(
            format!("{name}.hidden_weight"),
            init::fan_in_normal(rng, hidden, 4 * hidden),
        )?;
        let mut bias = Array2::zeros((1, 4 * hidden));
        // forget gate starts open
        bias.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(1.0);
        let bias = store.add(format!("{name}.bias"), bias)?;
        Ok(Self {
            input_weight,
            hidden_weight,
            bias,
            hidden,
        })
    }

    /// Runs the cell over every row of `x` and returns the final hidden state (1 x hidden).
    pub fn forward_sequence(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let steps = g.shape(x).0;
        let wx = g.param(self.input_weight);
        let wh = g.param(self.hidden_weight);
        let b = g.param(self.bias);
        let projected = g.matmul(x, wx)?;
        let projected = g.add_row(projected, b)?;
        let mut h = g.constant(Array2::zeros((1, self.hidden)));
        let mut c = g.constant(Array2::zeros((1, self.hidden)));
        let n = self.hidden;
        for t in 0..steps {
            let xt = g.slice_rows(projected, t, 1)?;
            let rec = g.matmul(h, wh)?;
            let gates = g.add(xt, rec)?;
            let i = g.slice_cols(gates, 0, n)?;
            let i = g.sigmoid(i);
            let f = g.slice_cols(gates, n, n)?;
            let f = g.sigmoid(f);
            let cand = g.slice_cols(gates, 2 * n, n)?;
            let cand = g.tanh(cand);
            let o = g.slice_cols(gates, 3 * n, n)?;
            let o = g.sigmoid(o);
            let keep = g.mul(f, c)?;
            let write = g.mul(i, cand)?;
            c = g.add(keep, write)?;
            let ct = g.tanh(c);
            h = g.mul(o, ct)?;
        }
        Ok(h)
    }
}
