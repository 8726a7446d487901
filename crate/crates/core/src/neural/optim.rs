use serde::{Deserialize, Serialize};

use super::graph::{Grads, ParamStore};
use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamWConfig { lr, ..AdamWConfig::default() }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamWState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        AdamWState { step: 0, m: zeros(), v: zeros() }
    }
}

/// One AdamW update. Weight decay is applied to the parameter directly
/// (`p ← p − lr·wd·p`), then the bias-corrected Adam step. Parameters with
/// `trainable[i] == false` are left untouched. Nothing is written if any
/// updated value would be non-finite.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &Grads,
    state: &mut AdamWState,
    hyper: &AdamWConfig,
    trainable: Option<&[bool]>,
) -> Result<(), NeuralError> {
    let step = state.step + 1;
    let bc1 = 1.0 - hyper.beta1.powi(step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(step as i32);
    let mut staged: Vec<(usize, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, t) in store.tensors.iter().enumerate() {
        if trainable.is_some_and(|tr| !tr[i]) {
            continue;
        }
        let g = &grads.0[i];
        let mut p = t.data.clone();
        let mut m = state.m[i].clone();
        let mut v = state.v[i].clone();
        for j in 0..p.len() {
            p[j] -= hyper.lr * hyper.weight_decay * p[j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g[j];
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
            if !p[j].is_finite() {
                return Err(NeuralError::NonFinite(format!("update of `{}`", store.names[i])));
            }
        }
        staged.push((i, p, m, v));
    }
    for (i, p, m, v) in staged {
        store.tensors[i].data = p;
        state.m[i] = m;
        state.v[i] = v;
    }
    state.step = step;
    Ok(())
}
