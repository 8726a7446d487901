//! Two-phase training: joint embedding on triplets with margin ranking
//! loss, then the pass/fail classifier on pairs with weighted cross-entropy.
//! Both phases use AdamW, early stopping on validation loss, and return the
//! best-validation parameters.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{build_triplet_records, class_weights, split, ClassWeights, DatasetError, Label, PairRecord, SplitRatios, TripletRecord};
use crate::extractor::{extract_mut, ExtractError, UnitTest};
use crate::harness::metrics::{compute_metrics, Metrics};
use crate::minilang::SourceMethod;
use crate::neural::{
    adamw_step, pair_forward, softmax2, triplet_loss, AdamWConfig, AdamWState, Grads, Graph, Model, ModelCheckpoint,
    ModelConfig, NeuralError, Tensor, TrainingMeta, Vocab, DEFAULT_MARGIN,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    EmptyData(String),
    #[error("non-finite loss in phase {phase}, epoch {epoch}: {message}")]
    NonFinite { phase: u8, epoch: usize, message: String },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

/// Where phase-2 class weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// N / (2 N_c) over the training split.
    TrainSplit,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase1_lr: f64,
    pub phase2_lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Overrides `max_epochs` for phase 1 when set.
    pub phase1_max_epochs: Option<usize>,
    pub seed: u64,
    pub alpha: f64,
    pub weight_decay: f64,
    pub class_weights: WeightSource,
    pub freeze_encoders: bool,
    /// Share of phase-1 triplets held out for validation.
    pub triplet_validation: f64,
    pub device: String,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            phase1_lr: 1.34e-4,
            phase2_lr: 1.34e-6,
            batch_size: 16,
            patience: 5,
            max_epochs: 100,
            phase1_max_epochs: None,
            seed: 0,
            alpha: DEFAULT_MARGIN,
            weight_decay: 0.01,
            class_weights: WeightSource::TrainSplit,
            freeze_encoders: false,
            triplet_validation: 0.1,
            device: "cpu".into(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.phase1_lr > 0.0 && self.phase2_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 || self.phase1_max_epochs == Some(0) {
            return bad("max_epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.triplet_validation) {
            return bad("triplet_validation must lie in [0, 1)");
        }
        if self.device != "cpu" {
            return bad("only the cpu device is available");
        }
        let m = &self.model;
        if m.heads == 0 || m.embed_dim % m.heads != 0 {
            return bad("model.embed_dim must be a multiple of model.heads");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn adamw(&self, lr: f64) -> AdamWConfig {
        AdamWConfig { lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub phase: u8,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
    pub epoch_seconds: Vec<f64>,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.val_losses[self.best_epoch - 1]
    }

    /// The report with timings removed, for reproducibility comparisons.
    pub fn without_timings(&self) -> TrainReport {
        TrainReport { epoch_seconds: Vec::new(), ..self.clone() }
    }
}

/// Patience rule over a validation series. Epochs are 1-based.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    max_epochs: usize,
    epoch: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        EarlyStopping { patience, max_epochs, epoch: 0, best: f64::INFINITY, best_epoch: 0 }
    }

    /// Records one epoch's validation loss; returns whether it is a new best
    /// and the stop reason if training should end now.
    pub fn observe(&mut self, val_loss: f64) -> (bool, Option<StopReason>) {
        self.epoch += 1;
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.best_epoch = self.epoch;
        }
        let stop = if self.epoch - self.best_epoch >= self.patience {
            Some(StopReason::Patience)
        } else if self.epoch >= self.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        (improved, stop)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Token ids of a triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletIds {
    pub test: Vec<usize>,
    pub pass: Vec<usize>,
    pub fail: Vec<usize>,
}

/// Token ids of a labeled pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairIds {
    pub test: Vec<usize>,
    pub mut_ids: Vec<usize>,
    pub label: Label,
}

pub fn encode_triplets(model: &Model, records: &[&TripletRecord]) -> Vec<TripletIds> {
    records
        .iter()
        .map(|r| TripletIds {
            test: model.token_ids(&r.test_text).0,
            pass: model.token_ids(&r.mut_pass_text).0,
            fail: model.token_ids(&r.mut_fail_text).0,
        })
        .collect()
}

pub fn encode_pairs(model: &Model, records: &[&PairRecord]) -> Vec<PairIds> {
    records
        .iter()
        .map(|r| PairIds { test: model.token_ids(&r.test_text).0, mut_ids: model.token_ids(&r.mut_text).0, label: r.label })
        .collect()
}

/// Vocabulary over the test and MUT texts of `pairs`.
pub fn build_vocab(pairs: &[&PairRecord]) -> Vocab {
    Vocab::build(pairs.iter().flat_map(|p| [p.test_text.as_str(), p.mut_text.as_str()]))
}

fn mask(model: &Model, ids: &[usize]) -> Vec<bool> {
    let mut m = vec![false; model.store.count()];
    for &i in ids {
        m[i] = true;
    }
    m
}

fn rounded(model: &Model) -> Model {
    let mut m = model.clone();
    m.store.round_to_f32();
    m
}

fn batches(order: &[usize], size: usize, drop_last: bool) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    // a set smaller than one batch still trains as a single batch
    if drop_last && out.len() > 1 && out.last().is_some_and(|b| b.len() < size) {
        out.pop();
    }
    out
}

fn non_finite(phase: u8, epoch: usize) -> impl Fn(NeuralError) -> TrainError {
    move |e| match e {
        NeuralError::NonFinite(message) => TrainError::NonFinite { phase, epoch, message },
        other => TrainError::Neural(other),
    }
}

/// Mean margin ranking loss over `set`.
pub fn triplet_set_loss(model: &Model, set: &[TripletIds], alpha: f64) -> Result<f64, NeuralError> {
    let mut total = 0.0;
    for t in set {
        let mut g = Graph::new(&model.store);
        let l = triplet_loss(model, &mut g, &t.test, &t.pass, &t.fail, alpha)?;
        total += g.scalar(l);
    }
    Ok(total / set.len() as f64)
}

/// Class-weighted mean cross-entropy over `set`: Σ w·ce / Σ w.
pub fn pair_set_loss(model: &Model, set: &[PairIds], weights: &ClassWeights) -> Result<f64, NeuralError> {
    let (mut num, mut den) = (0.0, 0.0);
    for p in set {
        let mut g = Graph::new(&model.store);
        let (logits, _, _) = pair_forward(model, &mut g, &p.test, &p.mut_ids)?;
        let w = weights.of(p.label);
        let ce = g.cross_entropy(logits, p.label.index(), 1.0);
        num += w * g.scalar(ce);
        den += w;
    }
    Ok(num / den)
}

struct Loop<'a> {
    phase: u8,
    lr: f64,
    max_epochs: usize,
    drop_last: bool,
    trainable: Vec<bool>,
    cfg: &'a TrainConfig,
}

impl Loop<'_> {
    /// Shared epoch loop. `step` accumulates one batch's gradient and returns
    /// (loss numerator, denominator) for the epoch's training loss; `validate`
    /// scores the f32-rounded parameters, which are what a checkpoint holds.
    fn run<S, V>(&self, mut model: Model, n: usize, mut step: S, mut validate: V) -> Result<(Model, TrainReport), TrainError>
    where
        S: FnMut(&Model, &[usize], &mut Grads) -> Result<(f64, f64), NeuralError>,
        V: FnMut(&Model) -> Result<f64, NeuralError>,
    {
        let hyper = self.cfg.adamw(self.lr);
        let mut state = AdamWState::new(&model.store);
        let mut grads = Grads::zeros_like(&model.store);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(self.phase as u64));
        let mut order: Vec<usize> = (0..n).collect();
        let mut stopper = EarlyStopping::new(self.cfg.patience, self.max_epochs);
        let mut best = rounded(&model);
        let mut report = TrainReport {
            phase: self.phase,
            train_losses: vec![],
            val_losses: vec![],
            best_epoch: 0,
            stop_epoch: 0,
            stop_reason: StopReason::MaxEpochs,
            epoch_seconds: vec![],
        };
        for epoch in 1..=self.max_epochs {
            let start = Instant::now();
            let err = non_finite(self.phase, epoch);
            order.shuffle(&mut rng);
            let (mut num, mut den) = (0.0, 0.0);
            for batch in batches(&order, self.cfg.batch_size, self.drop_last) {
                grads.zero();
                let (a, b) = step(&model, batch, &mut grads).map_err(&err)?;
                num += a;
                den += b;
                adamw_step(&mut model.store, &grads, &mut state, &hyper, Some(&self.trainable)).map_err(&err)?;
            }
            let train_loss = num / den;
            let snapshot = rounded(&model);
            let val_loss = validate(&snapshot).map_err(&err)?;
            if !train_loss.is_finite() || !val_loss.is_finite() {
                return Err(err(NeuralError::NonFinite(format!("train {train_loss}, validation {val_loss}"))));
            }
            report.train_losses.push(train_loss);
            report.val_losses.push(val_loss);
            report.epoch_seconds.push(start.elapsed().as_secs_f64());
            let (improved, stop) = stopper.observe(val_loss);
            if improved {
                best = snapshot;
            }
            if let Some(reason) = stop {
                report.stop_epoch = epoch;
                report.stop_reason = reason;
                break;
            }
        }
        report.best_epoch = stopper.best_epoch();
        Ok((best, report))
    }
}

/// Phase 1: trains the φ/ψ encoders on triplets with batch-summed MRL.
pub fn train_phase1(
    model: Model,
    train: &[TripletIds],
    validation: &[TripletIds],
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport), TrainError> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(TrainError::EmptyData("phase 1 needs training and validation triplets".into()));
    }
    let alpha = cfg.alpha;
    let lp = Loop {
        phase: 1,
        lr: cfg.phase1_lr,
        max_epochs: cfg.phase1_max_epochs.unwrap_or(cfg.max_epochs),
        drop_last: true,
        trainable: mask(&model, &model.encoder_param_ids()),
        cfg,
    };
    let step = |m: &Model, batch: &[usize], grads: &mut Grads| {
        let mut total = 0.0;
        for &i in batch {
            let t = &train[i];
            let mut g = Graph::new(&m.store);
            let l = triplet_loss(m, &mut g, &t.test, &t.pass, &t.fail, alpha)?;
            total += g.scalar(l);
            g.backward(l, 1.0, grads);
        }
        Ok((total, batch.len() as f64))
    };
    lp.run(model, train.len(), step, |m| triplet_set_loss(m, validation, alpha))
}

/// Phase 2: trains the classifier (and, unless frozen, fine-tunes the
/// encoders) on pairs with a class-weighted batch mean of cross-entropy.
pub fn train_phase2(
    model: Model,
    train: &[PairIds],
    validation: &[PairIds],
    weights: ClassWeights,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport), TrainError> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(TrainError::EmptyData("phase 2 needs training and validation pairs".into()));
    }
    let trainable = if cfg.freeze_encoders {
        let ids: Vec<usize> = model.classifier.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        mask(&model, &ids)
    } else {
        vec![true; model.store.count()]
    };
    let lp = Loop { phase: 2, lr: cfg.phase2_lr, max_epochs: cfg.max_epochs, drop_last: false, trainable, cfg };
    let step = |m: &Model, batch: &[usize], grads: &mut Grads| {
        let wsum: f64 = batch.iter().map(|&i| weights.of(train[i].label)).sum();
        let mut total = 0.0;
        for &i in batch {
            let p = &train[i];
            let w = weights.of(p.label);
            let mut g = Graph::new(&m.store);
            let (logits, _, _) = pair_forward(m, &mut g, &p.test, &p.mut_ids)?;
            let ce = g.cross_entropy(logits, p.label.index(), 1.0);
            total += w * g.scalar(ce);
            g.backward(ce, w / wsum, grads);
        }
        Ok((total, wsum))
    };
    lp.run(model, train.len(), step, |m| pair_set_loss(m, validation, &weights))
}

/// Output of [`train_two_phase`].
#[derive(Debug, Clone)]
pub struct TrainedOracle {
    pub checkpoint: ModelCheckpoint,
    pub phase1: TrainReport,
    pub phase2: TrainReport,
    pub class_weights: ClassWeights,
    pub phase1_triplets: usize,
}

/// The whole recipe on a train/validation pair split: vocabulary from the
/// training pairs, phase-1 triplets from the training pairs (split again for
/// validation), then phase 2 on the pairs.
pub fn train_two_phase(train: &[&PairRecord], validation: &[&PairRecord], cfg: &TrainConfig) -> Result<TrainedOracle, TrainError> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(TrainError::EmptyData("training and validation pairs are required".into()));
    }
    let model = Model::new(cfg.model.clone(), build_vocab(train), cfg.seed);
    let owned: Vec<PairRecord> = train.iter().map(|&p| p.clone()).collect();
    let triplets = build_triplet_records(&owned);
    if triplets.is_empty() {
        return Err(TrainError::EmptyData("no test has both a passing and a failing MUT in the training pairs".into()));
    }
    let ratios = SplitRatios { train: 1.0 - cfg.triplet_validation, validation: cfg.triplet_validation, test: 0.0 };
    let tsplit = split(&triplets, ratios, cfg.seed, true)?;
    let t_train = encode_triplets(&model, &tsplit.train.iter().map(|&i| &triplets[i]).collect::<Vec<_>>());
    let t_val = encode_triplets(&model, &tsplit.validation.iter().map(|&i| &triplets[i]).collect::<Vec<_>>());
    let (model, phase1) = train_phase1(model, &t_train, &t_val, cfg)?;

    let weights = match cfg.class_weights {
        WeightSource::TrainSplit => class_weights(train.iter().map(|p| p.label))?,
        WeightSource::Uniform => ClassWeights::balanced(),
    };
    let p_train = encode_pairs(&model, train);
    let p_val = encode_pairs(&model, validation);
    let (model, phase2) = train_phase2(model, &p_train, &p_val, weights, cfg)?;
    let meta = TrainingMeta {
        phase: 2,
        epoch: phase2.best_epoch,
        train_losses: phase2.train_losses.clone(),
        val_losses: phase2.val_losses.clone(),
        seed: cfg.seed,
    };
    Ok(TrainedOracle {
        checkpoint: ModelCheckpoint::new(&model, meta),
        phase1,
        phase2,
        class_weights: weights,
        phase1_triplets: triplets.len(),
    })
}

/// A pass/fail prediction with the internals interpretation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleVerdict {
    pub label: Label,
    pub pass_probability: f64,
    pub fail_probability: f64,
    pub logits: [f64; 2],
    pub test_embedding: Vec<f64>,
    pub mut_embedding: Vec<f64>,
    /// Per layer, per head attention of the test encoder.
    #[serde(skip)]
    pub test_attention: Vec<Vec<Tensor>>,
    /// Per layer, per head attention of the MUT encoder.
    #[serde(skip)]
    pub mut_attention: Vec<Vec<Tensor>>,
    /// Either text was cut to `max_len` tokens.
    pub truncated: bool,
    pub latency_ms: f64,
}

impl OracleVerdict {
    /// Equality ignoring the wall-clock latency.
    pub fn same_prediction(&self, other: &OracleVerdict) -> bool {
        OracleVerdict { latency_ms: 0.0, ..self.clone() } == OracleVerdict { latency_ms: 0.0, ..other.clone() }
    }
}

fn verdict(model: &Model, test_text: &str, mut_text: &str, start: Instant) -> Result<OracleVerdict, TrainError> {
    let (t_ids, t_cut) = model.token_ids(test_text);
    let (m_ids, m_cut) = model.token_ids(mut_text);
    let mut g = Graph::new(&model.store);
    let (logits, t, m) = pair_forward(model, &mut g, &t_ids, &m_ids)?;
    let z = g.value(logits);
    let logits = [z[0], z[1]];
    let [p, f] = softmax2(logits);
    let grab = |att: &[Vec<crate::neural::Var>]| att.iter().map(|l| l.iter().map(|v| g.tensor(*v)).collect()).collect();
    Ok(OracleVerdict {
        label: if f > p { Label::F } else { Label::P },
        pass_probability: p,
        fail_probability: f,
        logits,
        test_embedding: g.value(t.embedding).to_vec(),
        mut_embedding: g.value(m.embedding).to_vec(),
        test_attention: grab(&t.attention),
        mut_attention: grab(&m.attention),
        truncated: t_cut || m_cut,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Extracts the invoked methods of `test` from `program` and classifies the pair.
pub fn predict(model: &Model, test: &UnitTest, program: &[SourceMethod]) -> Result<OracleVerdict, TrainError> {
    let start = Instant::now();
    let extracted = extract_mut(test, program)?;
    verdict(model, &test.source_text(), &extracted.concatenated_source, start)
}

/// Classifies an already extracted (test text, MUT text) pair.
pub fn predict_texts(model: &Model, test_text: &str, mut_text: &str) -> Result<OracleVerdict, TrainError> {
    verdict(model, test_text, mut_text, Instant::now())
}

/// Seeded k-way partition of `0..n` into near-equal folds, each sorted.
pub fn kfold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if k < 2 || n < k {
        return Err(DatasetError::InsufficientData(format!("{n} items cannot form {k} folds")).into());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| {
            let mut fold = order[f * n / k..(f + 1) * n / k].to_vec();
            fold.sort_unstable();
            fold
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub validation: Vec<usize>,
    pub checkpoint: ModelCheckpoint,
    pub metrics: Metrics,
}

/// k-fold cross-validation; `best` indexes the fold with the highest
/// validation accuracy (earliest on ties).
#[derive(Debug, Clone)]
pub struct KFoldResult {
    pub folds: Vec<FoldResult>,
    pub best: usize,
}

pub fn kfold(pairs: &[PairRecord], k: usize, cfg: &TrainConfig) -> Result<KFoldResult, TrainError> {
    let assignment = kfold_assignment(pairs.len(), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    for (f, val_idx) in assignment.into_iter().enumerate() {
        let mut in_val = vec![false; pairs.len()];
        for &i in &val_idx {
            in_val[i] = true;
        }
        let train: Vec<&PairRecord> = pairs.iter().zip(&in_val).filter(|(_, &v)| !v).map(|(p, _)| p).collect();
        let validation: Vec<&PairRecord> = val_idx.iter().map(|&i| &pairs[i]).collect();
        let trained = train_two_phase(&train, &validation, cfg)?;
        let model = &trained.checkpoint.model;
        let mut predicted = Vec::with_capacity(validation.len());
        for p in &validation {
            predicted.push(predict_texts(model, &p.test_text, &p.mut_text)?.label);
        }
        let gold: Vec<Label> = validation.iter().map(|p| p.label).collect();
        let metrics = compute_metrics(&predicted, &gold, Label::P).map_err(|e| TrainError::EmptyData(e.to_string()))?;
        folds.push(FoldResult { fold: f, validation: val_idx, checkpoint: trained.checkpoint, metrics });
    }
    let best = folds
        .iter()
        .enumerate()
        .fold(0, |b, (i, r)| if r.metrics.accuracy > folds[b].metrics.accuracy { i } else { b });
    Ok(KFoldResult { folds, best })
}
