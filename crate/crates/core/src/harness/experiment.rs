//! Dataset assembly, experiment drivers and their on-disk reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, majority_baseline, metrics_by_family, Metrics};
use super::{HarnessError, REFERENCE_INFERENCE_MS};
use crate::dataset::io::{read_corpus, write_json};
use crate::dataset::{
    build_pairs, build_triplet_records, generate_mutants, split, synth_corpus, Corpus, Label, PairRecord, SplitRatios,
    SynthConfig,
};
use crate::minilang::DEFAULT_STEP_LIMIT;
use crate::neural::{lexemes, Model};
use crate::trainer::{predict_texts, train_two_phase, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Within,
    CrossFamily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveClass {
    Pass,
    Fail,
}

impl PositiveClass {
    pub fn label(self) -> Label {
        match self {
            PositiveClass::Pass => Label::P,
            PositiveClass::Fail => Label::F,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutantConfig {
    pub max_order: usize,
    pub per_method: usize,
    pub seed: u64,
}

impl Default for MutantConfig {
    fn default() -> Self {
        MutantConfig { max_order: 3, per_method: 6, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Read the corpus from here instead of synthesizing it.
    pub corpus_dir: Option<PathBuf>,
    pub corpus: SynthConfig,
    pub mutants: MutantConfig,
    pub step_limit: u64,
    pub split_seed: u64,
    /// Families withheld from training in cross-family mode.
    pub held_out: Vec<String>,
    pub k_grid: String,
    pub positive_class: PositiveClass,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Within,
            corpus_dir: None,
            corpus: SynthConfig::default(),
            mutants: MutantConfig::default(),
            step_limit: DEFAULT_STEP_LIMIT,
            split_seed: 11,
            held_out: Vec::new(),
            k_grid: "5:50:5".into(),
            positive_class: PositiveClass::Pass,
            out: None,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_toml(&text)
    }

    /// Sets every seed from one value: corpus `s`, mutants `s+1`, split
    /// `s+2`, training `s+3`.
    pub fn with_seed(mut self, s: u64) -> Self {
        self.corpus.seed = s;
        self.mutants.seed = s.wrapping_add(1);
        self.split_seed = s.wrapping_add(2);
        self.train.seed = s.wrapping_add(3);
        self
    }
}

/// Corpus, labeled pairs (as records) and their counts.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Corpus,
    pub mutant_count: usize,
    pub pairs: Vec<PairRecord>,
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let corpus = match &cfg.corpus_dir {
        Some(dir) => read_corpus(dir)?,
        None => synth_corpus(&cfg.corpus)?,
    };
    let mutants = generate_mutants(&corpus, cfg.mutants.max_order, cfg.mutants.per_method, cfg.mutants.seed);
    let pairs = build_pairs(&corpus, &mutants, cfg.step_limit)?.iter().map(|p| p.record()).collect();
    Ok(Dataset { corpus, mutant_count: mutants.len(), pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub families: usize,
    pub methods: usize,
    pub tests: usize,
    pub mutants: usize,
    pub pairs: usize,
    pub fail_share: f64,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub test_pairs: usize,
    pub held_out_pairs: usize,
    pub phase1_triplets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub dataset_seconds: f64,
    pub phase1_seconds: f64,
    pub phase2_seconds: f64,
    pub mean_inference_ms: f64,
    pub reference_inference_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossFamilyResult {
    pub held_out: Vec<String>,
    pub metrics: Metrics,
    pub per_family: BTreeMap<String, Metrics>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Held-out minus within-corpus value.
    pub delta_precision: Option<f64>,
    pub delta_recall: Option<f64>,
    /// Share of distinct held-out tokens present in the training vocabulary.
    pub vocab_overlap: f64,
    /// The same statistic for the within-corpus test split.
    pub within_vocab_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub dataset: DatasetStats,
    pub phase1: TrainReport,
    pub phase2: TrainReport,
    /// Metrics on the test split of the training families.
    pub metrics: Metrics,
    pub per_family: BTreeMap<String, Metrics>,
    pub majority_baseline: f64,
    pub cross_family: Option<CrossFamilyResult>,
    pub timings: Timings,
    pub checkpoint_hash: String,
    /// SHA-256 of this report with timings and the output path blanked.
    pub report_hash: String,
}

impl ExperimentReport {
    fn canonical(&self) -> ExperimentReport {
        let mut r = self.clone();
        r.config.out = None;
        r.phase1 = r.phase1.without_timings();
        r.phase2 = r.phase2.without_timings();
        r.timings = Timings {
            dataset_seconds: 0.0,
            phase1_seconds: 0.0,
            phase2_seconds: 0.0,
            mean_inference_ms: 0.0,
            reference_inference_ms: REFERENCE_INFERENCE_MS,
        };
        r.report_hash = String::new();
        r
    }

    pub fn compute_hash(&self) -> String {
        let json = serde_json::to_vec(&self.canonical()).expect("report serializes");
        crate::neural::checkpoint::hex_digest(&json)
    }
}

/// One scored pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub pair_id: String,
    pub family: String,
    /// `test` for the within-corpus split, `held_out` for withheld families.
    pub scope: String,
    pub gold: Label,
    pub predicted: Label,
    pub pass_probability: f64,
    #[serde(skip)]
    pub latency_ms: f64,
}

pub fn evaluate_pairs(model: &Model, pairs: &[&PairRecord], scope: &str) -> Result<Vec<VerdictRow>, HarnessError> {
    pairs
        .iter()
        .map(|p| {
            let v = predict_texts(model, &p.test_text, &p.mut_text)?;
            Ok(VerdictRow {
                pair_id: p.id.clone(),
                family: p.family.clone(),
                scope: scope.into(),
                gold: p.label,
                predicted: v.label,
                pass_probability: v.pass_probability,
                latency_ms: v.latency_ms,
            })
        })
        .collect()
}

fn score(rows: &[VerdictRow], positive: Label) -> Result<(Metrics, BTreeMap<String, Metrics>), HarnessError> {
    let pred: Vec<Label> = rows.iter().map(|r| r.predicted).collect();
    let gold: Vec<Label> = rows.iter().map(|r| r.gold).collect();
    let fams: Vec<&str> = rows.iter().map(|r| r.family.as_str()).collect();
    Ok((compute_metrics(&pred, &gold, positive)?, metrics_by_family(&pred, &gold, &fams, positive)?))
}

/// |distinct tokens of `pairs` ∩ vocabulary| / |distinct tokens of `pairs`|.
pub fn vocab_overlap(model: &Model, pairs: &[&PairRecord]) -> f64 {
    let toks: BTreeSet<String> =
        pairs.iter().flat_map(|p| lexemes(&p.test_text).into_iter().chain(lexemes(&p.mut_text))).collect();
    if toks.is_empty() {
        return 1.0;
    }
    toks.iter().filter(|t| model.vocab.contains(t)).count() as f64 / toks.len() as f64
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn write_verdicts_csv(rows: &[VerdictRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn read_verdicts_csv(path: &Path) -> Result<Vec<VerdictRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_io(path))?;
    r.deserialize().map(|row| row.map_err(csv_io(path))).collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per (scope, family) plus an `all` row per scope.
pub fn write_metrics_csv(rows: &[(String, String, Metrics)], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io(path))?;
    w.write_record(["scope", "family", "tp", "fp", "tn", "fn", "accuracy", "precision", "recall", "f1"]).map_err(csv_io(path))?;
    for (scope, family, m) in rows {
        w.write_record([
            scope.clone(),
            family.clone(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.tn.to_string(),
            m.fn_.to_string(),
            m.accuracy.to_string(),
            opt(m.precision),
            opt(m.recall),
            opt(m.f1),
        ])
        .map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| HarnessError::Io { path: path.display().to_string(), message: e.to_string() })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    match cfg.mode {
        Mode::Within => run_within_experiment(cfg),
        Mode::CrossFamily => run_cross_family_experiment(cfg),
    }
}

pub fn run_within_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let cfg = ExperimentConfig { mode: Mode::Within, ..cfg.clone() };
    run(&cfg, &[])
}

pub fn run_cross_family_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    if cfg.held_out.is_empty() {
        return Err(HarnessError::Config("cross-family mode needs at least one held-out family".into()));
    }
    let cfg = ExperimentConfig { mode: Mode::CrossFamily, ..cfg.clone() };
    run(&cfg, &cfg.held_out)
}

/// Trains on the stratified split of every non-withheld family, scores its
/// test split (within-corpus) and, when families are withheld, all of their
/// pairs (cross-family).
fn run(cfg: &ExperimentConfig, held_out: &[String]) -> Result<ExperimentReport, HarnessError> {
    let t0 = Instant::now();
    let data = build_dataset(cfg)?;
    for f in held_out {
        if data.corpus.family(f).is_none() {
            return Err(HarnessError::Config(format!("unknown held-out family `{f}`")));
        }
    }
    if !held_out.is_empty() && data.corpus.families.len() - held_out.len() < 1 {
        return Err(HarnessError::Config("no family left for training".into()));
    }
    let (inside, outside): (Vec<PairRecord>, Vec<PairRecord>) =
        data.pairs.iter().cloned().partition(|p| !held_out.contains(&p.family));
    let sp = split(&inside, SplitRatios::default(), cfg.split_seed, true)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &inside[i]).collect::<Vec<_>>();
    let (train, validation, test) = (pick(&sp.train), pick(&sp.validation), pick(&sp.test));
    let dataset_seconds = t0.elapsed().as_secs_f64();

    let trained = train_two_phase(&train, &validation, &cfg.train)?;
    let model = &trained.checkpoint.model;
    let positive = cfg.positive_class.label();

    let mut rows = evaluate_pairs(model, &test, "test")?;
    let (metrics, per_family) = score(&rows, positive)?;
    let gold: Vec<Label> = rows.iter().map(|r| r.gold).collect();
    let baseline = majority_baseline(&gold)?;

    let cross_family = if held_out.is_empty() {
        None
    } else {
        let out_refs: Vec<&PairRecord> = outside.iter().collect();
        let held_rows = evaluate_pairs(model, &out_refs, "held_out")?;
        let (m, per) = score(&held_rows, positive)?;
        let delta = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(x, y)| x - y);
        let result = CrossFamilyResult {
            held_out: held_out.to_vec(),
            precision: m.precision,
            recall: m.recall,
            delta_precision: delta(m.precision, metrics.precision),
            delta_recall: delta(m.recall, metrics.recall),
            vocab_overlap: vocab_overlap(model, &out_refs),
            within_vocab_overlap: vocab_overlap(model, &test),
            metrics: m,
            per_family: per,
        };
        rows.extend(held_rows);
        Some(result)
    };
    let mean_inference_ms = rows.iter().map(|r| r.latency_ms).sum::<f64>() / rows.len() as f64;
    let n_fail = data.pairs.iter().filter(|p| p.label == Label::F).count();
    let mut report = ExperimentReport {
        mode: cfg.mode,
        config: cfg.clone(),
        dataset: DatasetStats {
            families: data.corpus.families.len(),
            methods: data.corpus.method_count(),
            tests: data.corpus.test_count(),
            mutants: data.mutant_count,
            pairs: data.pairs.len(),
            fail_share: n_fail as f64 / data.pairs.len() as f64,
            train_pairs: train.len(),
            validation_pairs: validation.len(),
            test_pairs: test.len(),
            held_out_pairs: outside.len(),
            phase1_triplets: trained.phase1_triplets,
        },
        phase1: trained.phase1.clone(),
        phase2: trained.phase2.clone(),
        metrics,
        per_family,
        majority_baseline: baseline,
        cross_family,
        timings: Timings {
            dataset_seconds,
            phase1_seconds: trained.phase1.epoch_seconds.iter().sum(),
            phase2_seconds: trained.phase2.epoch_seconds.iter().sum(),
            mean_inference_ms,
            reference_inference_ms: REFERENCE_INFERENCE_MS,
        },
        checkpoint_hash: trained.checkpoint.hash().map_err(crate::trainer::TrainError::from)?,
        report_hash: String::new(),
    };
    report.report_hash = report.compute_hash();

    if let Some(out) = &cfg.out {
        write_outputs(out, &report, &rows, &trained.checkpoint)?;
    }
    Ok(report)
}

fn write_outputs(
    out: &Path,
    report: &ExperimentReport,
    rows: &[VerdictRow],
    checkpoint: &crate::neural::ModelCheckpoint,
) -> Result<(), HarnessError> {
    fs::create_dir_all(out).map_err(|e| HarnessError::Io { path: out.display().to_string(), message: e.to_string() })?;
    write_json(&out.join("report.json"), report)?;
    write_verdicts_csv(rows, &out.join("verdicts.csv"))?;
    let mut metric_rows: Vec<(String, String, Metrics)> = vec![("test".into(), "all".into(), report.metrics.clone())];
    metric_rows.extend(report.per_family.iter().map(|(f, m)| ("test".into(), f.clone(), m.clone())));
    if let Some(c) = &report.cross_family {
        metric_rows.push(("held_out".into(), "all".into(), c.metrics.clone()));
        metric_rows.extend(c.per_family.iter().map(|(f, m)| ("held_out".into(), f.clone(), m.clone())));
    }
    write_metrics_csv(&metric_rows, &out.join("metrics_per_family.csv"))?;
    checkpoint.save(&out.join("model.ckpt")).map_err(crate::trainer::TrainError::from)?;
    Ok(())
}

/// Triplet count of a pair set, as phase 1 would build it.
pub fn triplet_count(pairs: &[PairRecord]) -> usize {
    build_triplet_records(pairs).len()
}
