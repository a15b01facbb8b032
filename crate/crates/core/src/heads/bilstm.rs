//! Stacked bidirectional LSTM head.
//!
//! Two bidirectional layers; each direction is a standard LSTM cell with
//! per-gate input->hidden and hidden->hidden weight matrices. The embedding
//! concatenates the top layer's final forward state (after the last step)
//! and final backward state (after processing step one) into 2*hidden dims.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::init::glorot_dense;
use crate::tensor::{Graph, NodeId, ParamStore, Rng, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BiLstmDims {
    /// Features per sequence step coming in.
    pub input_dim: usize,
    /// Storing units per direction.
    pub hidden: usize,
}

impl BiLstmDims {
    pub fn paper(input_dim: usize) -> Self {
        BiLstmDims { input_dim, hidden: 22 }
    }

    /// Forward-final || backward-final of the top layer.
    pub fn embedding_dim(&self) -> usize {
        2 * self.hidden
    }
}

const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Bound node ids for one cell's twelve parameter tensors.
pub struct LstmCellNodes {
    wx: [NodeId; 4],
    wh: [NodeId; 4],
    b: [NodeId; 4],
}

impl LstmCellNodes {
    pub fn bind(g: &mut Graph, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut wx = Vec::with_capacity(4);
        let mut wh = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for gate in GATES {
            wx.push(g.bind(store, &format!("{prefix}.wx{gate}"))?);
            wh.push(g.bind(store, &format!("{prefix}.wh{gate}"))?);
            b.push(g.bind(store, &format!("{prefix}.b{gate}"))?);
        }
        Ok(LstmCellNodes {
            wx: [wx[0], wx[1], wx[2], wx[3]],
            wh: [wh[0], wh[1], wh[2], wh[3]],
            b: [b[0], b[1], b[2], b[3]],
        })
    }
}

/// Insert one cell's parameters under `prefix.*`.
fn cell_init(
    input_dim: usize,
    hidden: usize,
    rng: &Rng,
    store: &mut ParamStore,
    prefix: &str,
) -> Result<()> {
    for gate in GATES {
        let mut rx = rng.derive(&format!("init/{prefix}.wx{gate}"));
        store.insert(&format!("{prefix}.wx{gate}"), glorot_dense(&mut rx, input_dim, hidden)?)?;
        let mut rh = rng.derive(&format!("init/{prefix}.wh{gate}"));
        store.insert(&format!("{prefix}.wh{gate}"), glorot_dense(&mut rh, hidden, hidden)?)?;
        store.insert(&format!("{prefix}.b{gate}"), Tensor::zeros(vec![hidden]))?;
    }
    Ok(())
}

/// Insert both layers' forward and backward cells under `head.bilstm.*`.
pub fn bilstm_init(dims: &BiLstmDims, rng: &Rng, store: &mut ParamStore) -> Result<()> {
    if dims.hidden == 0 || dims.input_dim == 0 {
        return Err(CoreError::Config("bilstm extents must be positive".into()));
    }
    for dir in ["fwd", "bwd"] {
        cell_init(dims.input_dim, dims.hidden, rng, store, &format!("head.bilstm.l1.{dir}"))?;
        cell_init(2 * dims.hidden, dims.hidden, rng, store, &format!("head.bilstm.l2.{dir}"))?;
    }
    Ok(())
}

/// One LSTM step: gates i,f,o = sigmoid, candidate g = tanh;
/// c' = f * c + i * g, h' = o * tanh(c'). `x`, `h`, `c` are [1 x dim] rows.
pub fn lstm_cell_step(
    g: &mut Graph,
    cell: &LstmCellNodes,
    x: NodeId,
    h: NodeId,
    c: NodeId,
) -> Result<(NodeId, NodeId)> {
    let mut pre = [None, None, None, None];
    for gate in 0..4 {
        let xi = g.matmul(x, cell.wx[gate])?;
        let hi = g.matmul(h, cell.wh[gate])?;
        let s = g.add(xi, hi)?;
        pre[gate] = Some(g.add_row_vec(s, cell.b[gate])?);
    }
    let i = g.sigmoid(pre[0].unwrap());
    let f = g.sigmoid(pre[1].unwrap());
    let cand = g.tanh(pre[2].unwrap());
    let o = g.sigmoid(pre[3].unwrap());
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c_next = g.add(fc, ig)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Run one direction over the step rows, returning per-step hidden states
/// in input order.
fn run_direction(
    g: &mut Graph,
    cell: &LstmCellNodes,
    steps: &[NodeId],
    hidden: usize,
    reverse: bool,
) -> Result<Vec<NodeId>> {
    let mut h = g.constant(Tensor::zeros(vec![1, hidden]));
    let mut c = g.constant(Tensor::zeros(vec![1, hidden]));
    let mut out = vec![None; steps.len()];
    let order: Vec<usize> = if reverse {
        (0..steps.len()).rev().collect()
    } else {
        (0..steps.len()).collect()
    };
    for t in order {
        let (h2, c2) = lstm_cell_step(g, cell, steps[t], h, c)?;
        h = h2;
        c = c2;
        out[t] = Some(h);
    }
    Ok(out.into_iter().map(|o| o.expect("all steps visited")).collect())
}

/// Full stacked Bi-LSTM forward over a [seq_len x input_dim] sequence node.
/// Returns the [1 x 2*hidden] embedding.
pub fn bilstm_forward(
    g: &mut Graph,
    store: &ParamStore,
    dims: &BiLstmDims,
    seq: NodeId,
) -> Result<NodeId> {
    let shape = g.value(seq).shape().to_vec();
    if shape.len() != 2 || shape[1] != dims.input_dim {
        return Err(CoreError::ShapeMismatch(format!(
            "bilstm input {shape:?}, want [T x {}]",
            dims.input_dim
        )));
    }
    let seq_len = shape[0];
    let steps: Vec<NodeId> =
        (0..seq_len).map(|t| g.row(seq, t)).collect::<Result<_>>()?;

    let l1_fwd = LstmCellNodes::bind(g, store, "head.bilstm.l1.fwd")?;
    let l1_bwd = LstmCellNodes::bind(g, store, "head.bilstm.l1.bwd")?;
    let fwd1 = run_direction(g, &l1_fwd, &steps, dims.hidden, false)?;
    let bwd1 = run_direction(g, &l1_bwd, &steps, dims.hidden, true)?;
    let layer1: Vec<NodeId> = fwd1
        .iter()
        .zip(&bwd1)
        .map(|(&f, &b)| g.concat_cols(&[f, b]))
        .collect::<Result<_>>()?;

    let l2_fwd = LstmCellNodes::bind(g, store, "head.bilstm.l2.fwd")?;
    let l2_bwd = LstmCellNodes::bind(g, store, "head.bilstm.l2.bwd")?;
    let fwd2 = run_direction(g, &l2_fwd, &layer1, dims.hidden, false)?;
    let bwd2 = run_direction(g, &l2_bwd, &layer1, dims.hidden, true)?;

    // Forward direction ends at the last step; backward ends at step one.
    g.concat_cols(&[fwd2[seq_len - 1], bwd2[0]])
}
