//! Three-layer convolutional feature extractor.
//!
//! Two temporal convolutions (per-channel, kernel (1, kw), stride (1, sw),
//! ReLU) followed by one channel convolution (kernel (channels, 1), stride
//! (1, 1), sigmoid). At paper dimensions a 128 x 220 window maps through
//! (25, 128, 93) and (25, 128, 30) to (25, 1, 30), read out as a sequence of
//! 30 steps x 25 features.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::init::{glorot_conv, glorot_uniform};
use crate::tensor::{Graph, NodeId, ParamStore, Rng, Tensor};

/// Geometry of the extractor; paper values in `ExtractorDims::paper()`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ExtractorDims {
    /// Electrode count of the input window.
    pub channels: usize,
    /// Samples per window.
    pub time_len: usize,
    /// Temporal kernel width of layers 1-2.
    pub kernel_w: usize,
    /// Temporal stride of layers 1-2.
    pub stride_w: usize,
    /// Filters per layer.
    pub filters: usize,
}

impl ExtractorDims {
    pub fn paper() -> Self {
        ExtractorDims { channels: 128, time_len: 220, kernel_w: 35, stride_w: 2, filters: 25 }
    }

    /// Reduced geometry for gradient-oracle tests.
    pub fn surrogate(channels: usize, time_len: usize) -> Self {
        ExtractorDims { channels, time_len, kernel_w: 9, stride_w: 2, filters: 6 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.filters == 0 || self.stride_w == 0 {
            return Err(CoreError::Config("extractor extents must be positive".into()));
        }
        if self.kernel_w > self.time_len {
            return Err(CoreError::Config(format!(
                "temporal kernel {} exceeds window length {}",
                self.kernel_w, self.time_len
            )));
        }
        if self.width_after_layer1() < self.kernel_w {
            return Err(CoreError::Config(format!(
                "layer 2 kernel {} exceeds layer 1 output width {}",
                self.kernel_w,
                self.width_after_layer1()
            )));
        }
        Ok(())
    }

    pub fn width_after_layer1(&self) -> usize {
        (self.time_len - self.kernel_w) / self.stride_w + 1
    }

    pub fn width_after_layer2(&self) -> usize {
        (self.width_after_layer1() - self.kernel_w) / self.stride_w + 1
    }

    /// Sequence steps seen by the heads (= layer-2 output width).
    pub fn seq_len(&self) -> usize {
        self.width_after_layer2()
    }

    /// Features per sequence step (= filter count).
    pub fn feature_dim(&self) -> usize {
        self.filters
    }

    /// Learnable scalar count of all three layers.
    pub fn param_count(&self) -> usize {
        let l1 = self.filters * self.kernel_w + self.filters;
        let l2 = self.filters * self.filters * self.kernel_w + self.filters;
        let l3 = self.filters * self.filters * self.channels + self.filters;
        l1 + l2 + l3
    }
}

/// Insert Glorot-uniform kernels and zero biases under `fe.*`.
pub fn fe_init(dims: &ExtractorDims, rng: &Rng, store: &mut ParamStore) -> Result<()> {
    dims.validate()?;
    let f = dims.filters;
    let kw = dims.kernel_w;
    let mut r1 = rng.derive("init/fe.l1.w");
    store.insert("fe.l1.w", glorot_conv(&mut r1, f, 1, 1, kw)?)?;
    store.insert("fe.l1.b", Tensor::zeros(vec![f]))?;
    let mut r2 = rng.derive("init/fe.l2.w");
    store.insert("fe.l2.w", glorot_conv(&mut r2, f, f, 1, kw)?)?;
    store.insert("fe.l2.b", Tensor::zeros(vec![f]))?;
    let mut r3 = rng.derive("init/fe.l3.w");
    store.insert(
        "fe.l3.w",
        glorot_uniform(&mut r3, vec![f, f, dims.channels, 1], f * dims.channels, f * dims.channels)?,
    )?;
    store.insert("fe.l3.b", Tensor::zeros(vec![f]))?;
    Ok(())
}

/// Per-stage outputs, exposed for shape and equivariance tests.
pub struct ExtractorStages {
    /// ReLU(conv1): [filters x channels x w1].
    pub layer1: NodeId,
    /// ReLU(conv2): [filters x channels x w2].
    pub layer2: NodeId,
    /// sigmoid(conv3): [filters x 1 x w2].
    pub layer3: NodeId,
    /// [seq_len x filters] sequence fed to the heads.
    pub sequence: NodeId,
}

/// Extractor forward over an input node of shape [1 x channels x time_len].
pub fn fe_forward_stages(
    g: &mut Graph,
    store: &ParamStore,
    dims: &ExtractorDims,
    input: NodeId,
) -> Result<ExtractorStages> {
    let shape = g.value(input).shape().to_vec();
    if shape != [1, dims.channels, dims.time_len] {
        return Err(CoreError::ShapeMismatch(format!(
            "extractor input {shape:?}, want [1, {}, {}]",
            dims.channels, dims.time_len
        )));
    }
    let l1w = g.bind(store, "fe.l1.w")?;
    let l1b = g.bind(store, "fe.l1.b")?;
    let c1 = g.conv2d_valid(input, l1w, Some(l1b), (1, dims.stride_w))?;
    let layer1 = g.relu(c1);

    let l2w = g.bind(store, "fe.l2.w")?;
    let l2b = g.bind(store, "fe.l2.b")?;
    let c2 = g.conv2d_valid(layer1, l2w, Some(l2b), (1, dims.stride_w))?;
    let layer2 = g.relu(c2);

    let l3w = g.bind(store, "fe.l3.w")?;
    let l3b = g.bind(store, "fe.l3.b")?;
    let c3 = g.conv2d_valid(layer2, l3w, Some(l3b), (1, 1))?;
    let layer3 = g.sigmoid(c3);

    // [filters x 1 x w2] -> [w2 x filters]: time steps become the sequence.
    let flat = g.reshape(layer3, vec![dims.filters, dims.seq_len()])?;
    let sequence = g.transpose2(flat)?;
    Ok(ExtractorStages { layer1, layer2, layer3, sequence })
}

/// Extractor forward returning only the [seq_len x filters] sequence.
pub fn fe_forward(
    g: &mut Graph,
    store: &ParamStore,
    dims: &ExtractorDims,
    input: NodeId,
) -> Result<NodeId> {
    Ok(fe_forward_stages(g, store, dims, input)?.sequence)
}
