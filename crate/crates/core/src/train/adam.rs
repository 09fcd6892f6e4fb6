use std::collections::BTreeMap;

use crate::error::Result;
use crate::model::ParamStore;
use crate::tensor::{expect_same_shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moments per parameter name plus the shared step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Number of optimizer steps taken so far.
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One Adam update of every trainable, non-frozen entry using its current gradient.
///
/// Frozen entries and buffers are skipped entirely, moments included.
/// Moments are created lazily as zeros on first use.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    let AdamConfig { lr, beta1, beta2, epsilon } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for e in params.iter_mut().filter(|e| e.updatable()) {
        let shape = e.value.shape();
        let m = state.m.entry(e.name.clone()).or_insert_with(|| Tensor::zeros(shape));
        expect_same_shape(&e.name, &e.value, m)?;
        let v = state.v.entry(e.name.clone()).or_insert_with(|| Tensor::zeros(shape));
        expect_same_shape(&e.name, &e.value, v)?;
        let (theta, grad) = (e.value.data_mut(), e.grad.data());
        for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(m.data_mut()).zip(v.data_mut()) {
            let g = g as f64;
            let mi = beta1 * *m as f64 + (1.0 - beta1) * g;
            let vi = beta2 * *v as f64 + (1.0 - beta2) * g * g;
            *m = mi as f32;
            *v = vi as f32;
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *p = (*p as f64 - lr * m_hat / (v_hat.sqrt() + epsilon)) as f32;
        }
    }
    Ok(())
}
