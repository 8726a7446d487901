//! Vocabulary, the φ/ψ attention encoders and the pair classifier.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph::{Graph, ParamId, ParamStore, Var};
use super::tensor::Tensor;
use super::NeuralError;
use crate::minilang::lex;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;
const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<sep>"];

/// Token vocabulary shared by both encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    /// Distinct lexemes of `texts` in sorted order after the reserved ids.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen: Vec<String> = Vec::new();
        for text in texts {
            for t in lexemes(text) {
                seen.push(t);
            }
        }
        seen.sort();
        seen.dedup();
        seen.retain(|t| !RESERVED.contains(&t.as_str()));
        let tokens = RESERVED.iter().map(|s| s.to_string()).chain(seen).collect();
        Vocab::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        lexemes(text).iter().map(|t| self.id(t)).collect()
    }
}

/// Lexemes of MJ text; falls back to whitespace splitting for text the
/// lexer rejects.
pub fn lexemes(text: &str) -> Vec<String> {
    match lex(text) {
        Ok(toks) => toks.into_iter().map(|t| t.lexeme).collect(),
        Err(_) => text.split_whitespace().map(str::to_string).collect(),
    }
}

/// Drops the tail beyond `max_len`; reports whether anything was dropped.
pub fn truncate(mut ids: Vec<usize>, max_len: usize) -> (Vec<usize>, bool) {
    let cut = ids.len() > max_len;
    ids.truncate(max_len);
    (ids, cut)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub out_dim: usize,
    pub max_len: usize,
    pub hidden: Vec<usize>,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            heads: 4,
            layers: 2,
            ff_dim: 128,
            out_dim: 64,
            max_len: 256,
            hidden: vec![128, 32],
            init_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Encoder for MUT text.
    Phi,
    /// Encoder for test text.
    Psi,
}

impl Role {
    pub fn prefix(self) -> &'static str {
        match self {
            Role::Phi => "phi",
            Role::Psi => "psi",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIds {
    ln1: (ParamId, ParamId),
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

/// Parameter ids of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub role: Role,
    tok: ParamId,
    pos: ParamId,
    layers: Vec<LayerIds>,
    lnf: (ParamId, ParamId),
    proj: (ParamId, ParamId),
}

/// Parameter ids of the classifier stack, (weight, bias) per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub layers: Vec<(ParamId, ParamId)>,
}

/// Result of encoding one token sequence.
pub struct Encoded {
    pub embedding: Var,
    /// Softmax nodes per layer, per head.
    pub attention: Vec<Vec<Var>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub phi: EncoderParams,
    pub psi: EncoderParams,
    pub classifier: ClassifierParams,
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
    std: f64,
}

impl Init<'_> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (ParamId, ParamId) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.random_range(-a..a)).collect();
        let w = self.store.add(format!("{name}.w"), Tensor::from_vec(fan_in, fan_out, data));
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        (w, b)
    }

    fn norm(&mut self, name: &str, width: usize) -> (ParamId, ParamId) {
        let g = self.store.add(format!("{name}.g"), Tensor::filled(1, width, 1.0));
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(1, width));
        (g, b)
    }

    fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        let normal = Normal::new(0.0, self.std).expect("valid std");
        let data = (0..rows * cols).map(|_| normal.sample(&mut self.rng)).collect();
        self.store.add(name, Tensor::from_vec(rows, cols, data))
    }
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId, NeuralError> {
    store.id_of(name).ok_or_else(|| NeuralError::Checkpoint(format!("missing parameter `{name}`")))
}

fn lookup_pair(store: &ParamStore, name: &str, a: &str, b: &str) -> Result<(ParamId, ParamId), NeuralError> {
    Ok((lookup(store, &format!("{name}.{a}"))?, lookup(store, &format!("{name}.{b}"))?))
}

impl EncoderParams {
    fn init(role: Role, cfg: &ModelConfig, vocab_size: usize, init: &mut Init<'_>) -> Self {
        let p = role.prefix();
        let e = cfg.embed_dim;
        let tok = init.embedding(&format!("{p}.tok"), vocab_size, e);
        let pos = init.embedding(&format!("{p}.pos"), cfg.max_len, e);
        let layers = (0..cfg.layers)
            .map(|l| {
                let n = format!("{p}.l{l}");
                LayerIds {
                    ln1: init.norm(&format!("{n}.ln1"), e),
                    wq: init.linear(&format!("{n}.q"), e, e),
                    wk: init.linear(&format!("{n}.k"), e, e),
                    wv: init.linear(&format!("{n}.v"), e, e),
                    wo: init.linear(&format!("{n}.o"), e, e),
                    ln2: init.norm(&format!("{n}.ln2"), e),
                    ff1: init.linear(&format!("{n}.ff1"), e, cfg.ff_dim),
                    ff2: init.linear(&format!("{n}.ff2"), cfg.ff_dim, e),
                }
            })
            .collect();
        let lnf = init.norm(&format!("{p}.lnf"), e);
        let proj = init.linear(&format!("{p}.proj"), e, cfg.out_dim);
        EncoderParams { role, tok, pos, layers, lnf, proj }
    }

    fn locate(role: Role, cfg: &ModelConfig, store: &ParamStore) -> Result<Self, NeuralError> {
        let p = role.prefix();
        let layers = (0..cfg.layers)
            .map(|l| {
                let n = format!("{p}.l{l}");
                Ok(LayerIds {
                    ln1: lookup_pair(store, &format!("{n}.ln1"), "g", "b")?,
                    wq: lookup_pair(store, &format!("{n}.q"), "w", "b")?,
                    wk: lookup_pair(store, &format!("{n}.k"), "w", "b")?,
                    wv: lookup_pair(store, &format!("{n}.v"), "w", "b")?,
                    wo: lookup_pair(store, &format!("{n}.o"), "w", "b")?,
                    ln2: lookup_pair(store, &format!("{n}.ln2"), "g", "b")?,
                    ff1: lookup_pair(store, &format!("{n}.ff1"), "w", "b")?,
                    ff2: lookup_pair(store, &format!("{n}.ff2"), "w", "b")?,
                })
            })
            .collect::<Result<_, NeuralError>>()?;
        Ok(EncoderParams {
            role,
            tok: lookup(store, &format!("{p}.tok"))?,
            pos: lookup(store, &format!("{p}.pos"))?,
            layers,
            lnf: lookup_pair(store, &format!("{p}.lnf"), "g", "b")?,
            proj: lookup_pair(store, &format!("{p}.proj"), "w", "b")?,
        })
    }

    /// Ids of every parameter owned by this encoder.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.tok, self.pos];
        for l in &self.layers {
            for (a, b) in [l.ln1, l.wq, l.wk, l.wv, l.wo, l.ln2, l.ff1, l.ff2] {
                ids.push(a);
                ids.push(b);
            }
        }
        ids.extend([self.lnf.0, self.lnf.1, self.proj.0, self.proj.1]);
        ids
    }
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Self {
        assert!(config.heads > 0 && config.embed_dim % config.heads == 0, "embed_dim must divide into heads");
        let mut store = ParamStore::default();
        let mut init = Init { store: &mut store, rng: ChaCha8Rng::seed_from_u64(seed), std: config.init_std };
        let phi = EncoderParams::init(Role::Phi, &config, vocab.len(), &mut init);
        let psi = EncoderParams::init(Role::Psi, &config, vocab.len(), &mut init);
        let mut widths = vec![2 * config.out_dim];
        widths.extend(&config.hidden);
        widths.push(2);
        let layers = widths.windows(2).enumerate().map(|(i, w)| init.linear(&format!("clf.{i}"), w[0], w[1])).collect();
        Model { config, vocab, store, phi, psi, classifier: ClassifierParams { layers } }
    }

    /// Rebuilds the id tables from a named parameter store.
    pub fn from_parts(config: ModelConfig, vocab: Vocab, store: ParamStore) -> Result<Self, NeuralError> {
        let phi = EncoderParams::locate(Role::Phi, &config, &store)?;
        let psi = EncoderParams::locate(Role::Psi, &config, &store)?;
        let layers = (0..config.hidden.len() + 1)
            .map(|i| lookup_pair(&store, &format!("clf.{i}"), "w", "b"))
            .collect::<Result<_, _>>()?;
        Ok(Model { config, vocab, store, phi, psi, classifier: ClassifierParams { layers } })
    }

    pub fn encoder(&self, role: Role) -> &EncoderParams {
        match role {
            Role::Phi => &self.phi,
            Role::Psi => &self.psi,
        }
    }

    /// Token ids for `text`, truncated to `max_len`.
    pub fn token_ids(&self, text: &str) -> (Vec<usize>, bool) {
        truncate(self.vocab.encode(text), self.config.max_len)
    }

    /// Pre-norm transformer encoder, mean-pooled and projected to `out_dim`.
    pub fn encode(&self, g: &mut Graph<'_>, role: Role, ids: &[usize]) -> Result<Encoded, NeuralError> {
        let n = ids.len();
        if n == 0 {
            return Err(NeuralError::EmptySequence);
        }
        if n > self.config.max_len {
            return Err(NeuralError::SequenceTooLong { len: n, max: self.config.max_len });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(NeuralError::UnknownId(bad));
        }
        let enc = self.encoder(role);
        let e = self.config.embed_dim;
        let h = self.config.heads;
        let dh = e / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let tok = g.gather(enc.tok, ids);
        let pos = g.rows(enc.pos, 0, n);
        let mut x = g.add(tok, pos);
        let mut attention = Vec::with_capacity(enc.layers.len());
        for l in &enc.layers {
            let xn = layer_norm(g, x, l.ln1);
            let q = linear(g, xn, l.wq);
            let k = linear(g, xn, l.wk);
            let v = linear(g, xn, l.wv);
            let mut heads = Vec::with_capacity(h);
            let mut probs = Vec::with_capacity(h);
            for head in 0..h {
                let qh = g.slice_cols(q, head * dh, dh);
                let kh = g.slice_cols(k, head * dh, dh);
                let vh = g.slice_cols(v, head * dh, dh);
                let s = g.matmul_t(qh, kh);
                let s = g.scale(s, scale);
                let a = g.softmax_rows(s);
                probs.push(a);
                heads.push(g.matmul(a, vh));
            }
            let cat = if h == 1 { heads[0] } else { g.concat_cols(&heads) };
            let o = linear(g, cat, l.wo);
            x = g.add(x, o);
            let xn = layer_norm(g, x, l.ln2);
            let f = linear(g, xn, l.ff1);
            let f = g.relu(f);
            let f = linear(g, f, l.ff2);
            x = g.add(x, f);
            attention.push(probs);
        }
        let x = layer_norm(g, x, enc.lnf);
        let pooled = g.mean_rows(x);
        let embedding = linear(g, pooled, enc.proj);
        Ok(Encoded { embedding, attention })
    }

    /// Classifier logits over `[D_t ; D_m]`.
    pub fn classify(&self, g: &mut Graph<'_>, dt: Var, dm: Var) -> Var {
        let mut x = g.concat_cols(&[dt, dm]);
        let last = self.classifier.layers.len() - 1;
        for (i, &wb) in self.classifier.layers.iter().enumerate() {
            x = linear(g, x, wb);
            if i < last {
                x = g.relu(x);
            }
        }
        x
    }

    /// Ids of parameters belonging to the two encoders.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.phi.param_ids();
        ids.extend(self.psi.param_ids());
        ids
    }
}

fn linear(g: &mut Graph<'_>, x: Var, (w, b): (ParamId, ParamId)) -> Var {
    let w = g.param(w);
    let b = g.param(b);
    let y = g.matmul(x, w);
    g.add_row(y, b)
}

fn layer_norm(g: &mut Graph<'_>, x: Var, (gain, bias): (ParamId, ParamId)) -> Var {
    let gain = g.param(gain);
    let bias = g.param(bias);
    g.layer_norm(x, gain, bias)
}
