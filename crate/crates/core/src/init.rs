//! Weight initialization: Glorot-uniform draws, zero biases.

use crate::error::Result;
use crate::tensor::{Rng, Tensor};

/// Glorot-uniform bound sqrt(6 / (fan_in + fan_out)).
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Tensor of `shape` drawn uniformly from [-bound, bound).
pub fn glorot_uniform(
    rng: &mut Rng,
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
) -> Result<Tensor> {
    let bound = glorot_bound(fan_in, fan_out);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::new(shape, data)
}

/// Dense weight [in x out] with fans taken from the two extents.
pub fn glorot_dense(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Result<Tensor> {
    glorot_uniform(rng, vec![fan_in, fan_out], fan_in, fan_out)
}

/// Convolution kernels [c_out x c_in x kh x kw]; fans count the receptive
/// field: fan_in = c_in*kh*kw, fan_out = c_out*kh*kw.
pub fn glorot_conv(
    rng: &mut Rng,
    c_out: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
) -> Result<Tensor> {
    glorot_uniform(rng, vec![c_out, c_in, kh, kw], c_in * kh * kw, c_out * kh * kw)
}
