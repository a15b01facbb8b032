//! Interchangeable sequence heads: stacked Bi-LSTM and transformer encoder,
//! behind one "sequence in, embedding out" interface.

pub mod bilstm;
pub mod transformer;

pub use bilstm::{bilstm_forward, bilstm_init, lstm_cell_step, BiLstmDims, LstmCellNodes};
pub use transformer::{
    positional_encoding, transformer_forward, transformer_forward_detailed, transformer_init,
    TransformerDims, TransformerOut, LN_EPS,
};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::{Graph, NodeId, ParamStore, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Bilstm,
    Transformer,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Bilstm => "bilstm",
            HeadKind::Transformer => "transformer",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bilstm" => Ok(HeadKind::Bilstm),
            "transformer" => Ok(HeadKind::Transformer),
            other => Err(CoreError::InvalidArg(format!(
                "unknown head `{other}` (expected bilstm or transformer)"
            ))),
        }
    }

    /// Stable id byte used by the checkpoint format.
    pub fn id_byte(&self) -> u8 {
        match self {
            HeadKind::Bilstm => 1,
            HeadKind::Transformer => 2,
        }
    }

    pub fn from_id_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(HeadKind::Bilstm),
            2 => Ok(HeadKind::Transformer),
            other => Err(CoreError::Format(format!("unknown head id byte {other}"))),
        }
    }
}

/// Head choice plus its dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadSpec {
    Bilstm(BiLstmDims),
    Transformer(TransformerDims),
}

impl HeadSpec {
    pub fn kind(&self) -> HeadKind {
        match self {
            HeadSpec::Bilstm(_) => HeadKind::Bilstm,
            HeadSpec::Transformer(_) => HeadKind::Transformer,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            HeadSpec::Bilstm(d) => d.embedding_dim(),
            HeadSpec::Transformer(d) => d.embedding_dim(),
        }
    }

    pub fn init(&self, rng: &Rng, store: &mut ParamStore) -> Result<()> {
        match self {
            HeadSpec::Bilstm(d) => bilstm_init(d, rng, store),
            HeadSpec::Transformer(d) => transformer_init(d, rng, store),
        }
    }
}

/// Dispatch a [seq_len x features] sequence node to the chosen head and
/// return its [1 x embedding_dim] embedding.
pub fn head_embed(
    g: &mut Graph,
    store: &ParamStore,
    spec: &HeadSpec,
    seq: NodeId,
) -> Result<NodeId> {
    match spec {
        HeadSpec::Bilstm(d) => bilstm_forward(g, store, d, seq),
        HeadSpec::Transformer(d) => transformer_forward(g, store, d, seq),
    }
}
