//! Tensor core with reverse-mode gradients, the token vocabulary, the φ/ψ
//! attention encoders, losses and AdamW.
//!
//! Distances in the joint space are cosine distances, `1 − cos(u, v)`.

pub mod checkpoint;
pub mod graph;
pub mod model;
pub mod optim;
pub mod tensor;

use thiserror::Error;

use crate::dataset::{ClassWeights, Label};

pub use checkpoint::{ModelCheckpoint, TrainingMeta};
pub use graph::{Grads, Graph, ParamId, ParamStore, Var};
pub use model::{lexemes, truncate, ClassifierParams, EncoderParams, Encoded, Model, ModelConfig, Role, Vocab, PAD, SEP, UNK};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use tensor::Tensor;

pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuralError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("sequence of {len} tokens exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NeuralError> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(NeuralError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}

/// max(dist(t, m+) − dist(t, m−) + α, 0).
pub fn margin_ranking_loss(dt: &[f64], dp: &[f64], dn: &[f64], alpha: f64) -> Result<f64, NeuralError> {
    let d_pos = 1.0 - cosine_similarity(dt, dp)?;
    let d_neg = 1.0 - cosine_similarity(dt, dn)?;
    Ok((d_pos - d_neg + alpha).max(0.0))
}

/// −w_label · log softmax(logits)[label], computed with a max-shift.
pub fn weighted_cross_entropy(logits: [f64; 2], label: Label, weights: &ClassWeights) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    -weights.of(label) * (logits[label.index()] - m - lse)
}

/// Softmax of two logits as (P, F) probabilities.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let mut v = logits;
    graph::softmax_in_place(&mut v);
    v
}

/// Margin ranking loss as a graph node, built from cosine similarities:
/// relu(cos(t, m−) − cos(t, m+) + α).
pub fn mrl_node(g: &mut Graph<'_>, dt: Var, dp: Var, dn: Var, alpha: f64) -> Result<Var, NeuralError> {
    let cp = g.cosine(dt, dp)?;
    let cn = g.cosine(dt, dn)?;
    let diff = g.sub(cn, cp);
    let shifted = g.add_const(diff, alpha);
    Ok(g.relu(shifted))
}

/// Encodes a triplet and returns its MRL node.
pub fn triplet_loss(
    model: &Model,
    g: &mut Graph<'_>,
    test: &[usize],
    mut_pass: &[usize],
    mut_fail: &[usize],
    alpha: f64,
) -> Result<Var, NeuralError> {
    let dt = model.encode(g, Role::Psi, test)?.embedding;
    let dp = model.encode(g, Role::Phi, mut_pass)?.embedding;
    let dn = model.encode(g, Role::Phi, mut_fail)?.embedding;
    mrl_node(g, dt, dp, dn, alpha)
}

/// Encodes a pair and returns (logits, test encoding, MUT encoding).
pub fn pair_forward(
    model: &Model,
    g: &mut Graph<'_>,
    test: &[usize],
    mut_ids: &[usize],
) -> Result<(Var, Encoded, Encoded), NeuralError> {
    let t = model.encode(g, Role::Psi, test)?;
    let m = model.encode(g, Role::Phi, mut_ids)?;
    let logits = model.classify(g, t.embedding, m.embedding);
    Ok((logits, t, m))
}

/// Embedding and per-layer, per-head attention matrices for `ids`.
pub fn encode(model: &Model, role: Role, ids: &[usize]) -> Result<(Vec<f64>, Vec<Vec<Tensor>>), NeuralError> {
    let mut g = Graph::new(&model.store);
    let enc = model.encode(&mut g, role, ids)?;
    let emb = g.value(enc.embedding).to_vec();
    let att = enc.attention.iter().map(|layer| layer.iter().map(|v| g.tensor(*v)).collect()).collect();
    Ok((emb, att))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub pass: bool,
    /// (parameter name, element, analytic, numeric) at the maximum.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares analytic gradients with central differences over every
/// parameter element. `f` returns the loss and, when given a buffer, adds
/// its gradient. Relative error is `|a − n| / max(|a|, |n|, 1e-6)`; the
/// floor keeps exactly-zero gradients (attention key biases, for one) from
/// turning finite-difference round-off into large ratios.
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, h: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&ParamStore, Option<&mut Grads>) -> f64,
{
    let mut analytic = Grads::zeros_like(store);
    f(store, Some(&mut analytic));
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut worst = None;
    for t in 0..store.tensors.len() {
        for i in 0..store.tensors[t].data.len() {
            let orig = store.tensors[t].data[i];
            store.tensors[t].data[i] = orig + h;
            let up = f(store, None);
            store.tensors[t].data[i] = orig - h;
            let down = f(store, None);
            store.tensors[t].data[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.0[t][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > max_rel || worst.is_none() {
                max_rel = rel;
                worst = Some((store.names[t].clone(), i, a, numeric));
            }
            checked += 1;
        }
    }
    GradCheckReport { max_rel_error: max_rel, checked, pass: max_rel <= tol, worst }
}
