//! Single-layer transformer encoder head.
//!
//! Input projection to d_model, fixed sinusoidal positional encodings, one
//! encoder layer (8-head self-attention plus a two-dense feed-forward, each
//! wrapped in residual + layer norm), and a flattened-token readout: the
//! embedding keeps all seq_len tokens rather than averaging them.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::init::glorot_dense;
use crate::tensor::{Graph, NodeId, ParamStore, Rng, Tensor};

/// Layer-norm variance floor; small enough that normalized rows sit within
/// 1e-6 of unit variance for order-one activations.
pub const LN_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TransformerDims {
    /// Features per incoming sequence step.
    pub input_dim: usize,
    /// Sequence length (tokens).
    pub seq_len: usize,
    /// Token width inside the encoder; divisible by `heads`.
    pub d_model: usize,
    /// Attention heads.
    pub heads: usize,
    /// Feed-forward inner width.
    pub d_ff: usize,
    /// Pre-norm residual arrangement instead of post-norm.
    pub pre_norm: bool,
    /// Add sinusoidal positional encodings after the input projection.
    pub positional: bool,
}

impl TransformerDims {
    pub fn paper(input_dim: usize, seq_len: usize) -> Self {
        TransformerDims {
            input_dim,
            seq_len,
            d_model: 32,
            heads: 8,
            d_ff: 64,
            pre_norm: false,
            positional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.seq_len == 0 {
            return Err(CoreError::Config("transformer extents must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Flattened-token readout width.
    pub fn embedding_dim(&self) -> usize {
        self.seq_len * self.d_model
    }
}

/// Insert encoder parameters under `head.tr.*`.
pub fn transformer_init(dims: &TransformerDims, rng: &Rng, store: &mut ParamStore) -> Result<()> {
    dims.validate()?;
    let dm = dims.d_model;
    let dense = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| -> Result<()> {
        let mut r = rng.derive(&format!("init/{name}"));
        store.insert(name, glorot_dense(&mut r, fan_in, fan_out)?)?;
        store.insert(&name.replace(".w", ".b"), Tensor::zeros(vec![fan_out]))?;
        Ok(())
    };
    dense(store, "head.tr.in.w", dims.input_dim, dm)?;
    dense(store, "head.tr.attn.wq", dm, dm)?;
    // No key bias: softmax is invariant to the per-row score shift a key
    // bias produces, so the parameter would be exactly gradient-free.
    let mut rk = rng.derive("init/head.tr.attn.wk");
    store.insert("head.tr.attn.wk", glorot_dense(&mut rk, dm, dm)?)?;
    dense(store, "head.tr.attn.wv", dm, dm)?;
    dense(store, "head.tr.attn.wo", dm, dm)?;
    dense(store, "head.tr.ff.w1", dm, dims.d_ff)?;
    dense(store, "head.tr.ff.w2", dims.d_ff, dm)?;
    store.insert("head.tr.ln1.gamma", Tensor::filled(vec![dm], 1.0)?)?;
    store.insert("head.tr.ln1.beta", Tensor::zeros(vec![dm]))?;
    store.insert("head.tr.ln2.gamma", Tensor::filled(vec![dm], 1.0)?)?;
    store.insert("head.tr.ln2.beta", Tensor::zeros(vec![dm]))?;
    Ok(())
}

/// Fixed sinusoidal positional encodings [seq_len x d_model].
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Tensor {
    let mut data = vec![0.0; seq_len * d_model];
    for pos in 0..seq_len {
        for i in 0..d_model / 2 {
            let rate = 1.0 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            data[pos * d_model + 2 * i] = (pos as f64 * rate).sin();
            if 2 * i + 1 < d_model {
                data[pos * d_model + 2 * i + 1] = (pos as f64 * rate).cos();
            }
        }
    }
    Tensor::new(vec![seq_len, d_model], data).expect("positional encodings are finite")
}

/// Encoder forward products: the flattened embedding plus named
/// intermediates used by invariants and tests.
pub struct TransformerOut {
    /// [1 x seq_len*d_model] flattened tokens.
    pub embedding: NodeId,
    /// [seq_len x d_model] encoder output tokens.
    pub tokens: NodeId,
    /// Row-stochastic attention weights per head, each [seq_len x seq_len].
    pub attention: Vec<NodeId>,
}

/// Full encoder forward over a [seq_len x input_dim] sequence node.
pub fn transformer_forward_detailed(
    g: &mut Graph,
    store: &ParamStore,
    dims: &TransformerDims,
    seq: NodeId,
) -> Result<TransformerOut> {
    dims.validate()?;
    let shape = g.value(seq).shape().to_vec();
    if shape != [dims.seq_len, dims.input_dim] {
        return Err(CoreError::ShapeMismatch(format!(
            "transformer input {shape:?}, want [{} x {}]",
            dims.seq_len, dims.input_dim
        )));
    }
    let dm = dims.d_model;
    let dh = dims.head_dim();

    let w_in = g.bind(store, "head.tr.in.w")?;
    let b_in = g.bind(store, "head.tr.in.b")?;
    let proj = g.matmul(seq, w_in)?;
    let mut x = g.add_row_vec(proj, b_in)?;
    if dims.positional {
        let pe = g.constant(positional_encoding(dims.seq_len, dm));
        x = g.add(x, pe)?;
    }

    let ln1_g = g.bind(store, "head.tr.ln1.gamma")?;
    let ln1_b = g.bind(store, "head.tr.ln1.beta")?;
    let ln2_g = g.bind(store, "head.tr.ln2.gamma")?;
    let ln2_b = g.bind(store, "head.tr.ln2.beta")?;

    // Attention sublayer on `attn_in`, residual around it.
    let attn_in = if dims.pre_norm { g.layer_norm_rows(x, ln1_g, ln1_b, LN_EPS)? } else { x };
    let (ctx, attention) = attention_block(g, store, dims, attn_in, dh)?;
    let res1 = g.add(x, ctx)?;
    let x1 = if dims.pre_norm { res1 } else { g.layer_norm_rows(res1, ln1_g, ln1_b, LN_EPS)? };

    let ff_in = if dims.pre_norm { g.layer_norm_rows(x1, ln2_g, ln2_b, LN_EPS)? } else { x1 };
    let w1 = g.bind(store, "head.tr.ff.w1")?;
    let b1 = g.bind(store, "head.tr.ff.b1")?;
    let w2 = g.bind(store, "head.tr.ff.w2")?;
    let b2 = g.bind(store, "head.tr.ff.b2")?;
    let h = g.matmul(ff_in, w1)?;
    let h = g.add_row_vec(h, b1)?;
    let h = g.relu(h);
    let f = g.matmul(h, w2)?;
    let f = g.add_row_vec(f, b2)?;
    let res2 = g.add(x1, f)?;
    let tokens = if dims.pre_norm { res2 } else { g.layer_norm_rows(res2, ln2_g, ln2_b, LN_EPS)? };

    let embedding = g.reshape(tokens, vec![1, dims.embedding_dim()])?;
    Ok(TransformerOut { embedding, tokens, attention })
}

fn attention_block(
    g: &mut Graph,
    store: &ParamStore,
    dims: &TransformerDims,
    x: NodeId,
    dh: usize,
) -> Result<(NodeId, Vec<NodeId>)> {
    let wq = g.bind(store, "head.tr.attn.wq")?;
    let bq = g.bind(store, "head.tr.attn.bq")?;
    let wk = g.bind(store, "head.tr.attn.wk")?;
    let wv = g.bind(store, "head.tr.attn.wv")?;
    let bv = g.bind(store, "head.tr.attn.bv")?;
    let wo = g.bind(store, "head.tr.attn.wo")?;
    let bo = g.bind(store, "head.tr.attn.bo")?;

    let q = g.matmul(x, wq)?;
    let q = g.add_row_vec(q, bq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let v = g.add_row_vec(v, bv)?;

    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx_heads = Vec::with_capacity(dims.heads);
    let mut attention = Vec::with_capacity(dims.heads);
    for hi in 0..dims.heads {
        let qh = g.slice_cols(q, hi * dh, dh)?;
        let kh = g.slice_cols(k, hi * dh, dh)?;
        let vh = g.slice_cols(v, hi * dh, dh)?;
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let attn = g.softmax_rows(scores)?;
        attention.push(attn);
        ctx_heads.push(g.matmul(attn, vh)?);
    }
    let ctx = g.concat_cols(&ctx_heads)?;
    let out = g.matmul(ctx, wo)?;
    let out = g.add_row_vec(out, bo)?;
    Ok((out, attention))
}

/// Encoder forward returning only the flattened embedding.
pub fn transformer_forward(
    g: &mut Graph,
    store: &ParamStore,
    dims: &TransformerDims,
    seq: NodeId,
) -> Result<NodeId> {
    Ok(transformer_forward_detailed(g, store, dims, seq)?.embedding)
}
