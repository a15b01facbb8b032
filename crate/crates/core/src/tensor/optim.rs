//! Bias-corrected Adam over a `ParamStore`.

use super::params::{Gradients, ParamStore};
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates in `ParamStore` flatten order.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let n = params.total_scalars();
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place. Every parameter must have a gradient of
/// matching length; gradients must be finite.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.total_scalars() {
        return Err(CoreError::ShapeMismatch(format!(
            "optimizer state holds {} scalars, params hold {}",
            state.m.len(),
            params.total_scalars()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let names: Vec<String> = params.names().cloned().collect();
    let mut offset = 0;
    for name in &names {
        let tensor = params.get_mut(name)?;
        let n = tensor.numel();
        let g = grads
            .get(name)
            .ok_or_else(|| CoreError::InvalidArg(format!("missing gradient for `{name}`")))?;
        if g.len() != n {
            return Err(CoreError::ShapeMismatch(format!(
                "gradient `{name}`: {} values for {n} scalars",
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(format!("gradient for `{name}`")));
        }
        let data = tensor.data_mut();
        let m = &mut state.m[offset..offset + n];
        let v = &mut state.v[offset..offset + n];
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        offset += n;
    }
    Ok(())
}
