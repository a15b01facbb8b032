//! Classifier block: a sigmoid dense layer (100 neurons) into a K-way
//! softmax output layer.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::init::glorot_dense;
use crate::tensor::{Graph, NodeId, ParamStore, Rng, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ClassifierDims {
    pub embedding_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
}

impl ClassifierDims {
    pub fn paper(embedding_dim: usize, n_classes: usize) -> Self {
        ClassifierDims { embedding_dim, hidden: 100, n_classes }
    }
}

/// Insert both dense layers under `cls.*`.
pub fn classifier_init(dims: &ClassifierDims, rng: &Rng, store: &mut ParamStore) -> Result<()> {
    if dims.embedding_dim == 0 || dims.hidden == 0 || dims.n_classes == 0 {
        return Err(CoreError::Config("classifier extents must be positive".into()));
    }
    let mut r1 = rng.derive("init/cls.d1.w");
    store.insert("cls.d1.w", glorot_dense(&mut r1, dims.embedding_dim, dims.hidden)?)?;
    store.insert("cls.d1.b", Tensor::zeros(vec![dims.hidden]))?;
    let mut r2 = rng.derive("init/cls.d2.w");
    store.insert("cls.d2.w", glorot_dense(&mut r2, dims.hidden, dims.n_classes)?)?;
    store.insert("cls.d2.b", Tensor::zeros(vec![dims.n_classes]))?;
    Ok(())
}

/// Logits [B x K] from embeddings [B x embedding_dim].
pub fn classifier_logits(
    g: &mut Graph,
    store: &ParamStore,
    dims: &ClassifierDims,
    emb: NodeId,
) -> Result<NodeId> {
    let shape = g.value(emb).shape().to_vec();
    if shape.len() != 2 || shape[1] != dims.embedding_dim {
        return Err(CoreError::ShapeMismatch(format!(
            "classifier input {shape:?}, want [B x {}]",
            dims.embedding_dim
        )));
    }
    let w1 = g.bind(store, "cls.d1.w")?;
    let b1 = g.bind(store, "cls.d1.b")?;
    let w2 = g.bind(store, "cls.d2.w")?;
    let b2 = g.bind(store, "cls.d2.b")?;
    let h = g.matmul(emb, w1)?;
    let h = g.add_row_vec(h, b1)?;
    let h = g.sigmoid(h);
    let o = g.matmul(h, w2)?;
    g.add_row_vec(o, b2)
}

/// Class probabilities [B x K] (softmax over the logits).
pub fn classify(
    g: &mut Graph,
    store: &ParamStore,
    dims: &ClassifierDims,
    emb: NodeId,
) -> Result<NodeId> {
    let logits = classifier_logits(g, store, dims, emb)?;
    g.softmax_rows(logits)
}
