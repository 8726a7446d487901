//! Confusion counts and the derived ratios.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataset::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub positive: Label,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    /// Absent when nothing was predicted positive.
    pub precision: Option<f64>,
    /// Absent when there are no positive gold labels.
    pub recall: Option<f64>,
    /// Absent when precision or recall is, or both are zero.
    pub f1: Option<f64>,
}

impl Metrics {
    pub fn from_counts(positive: Label, tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self, HarnessError> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(HarnessError::EmptyInput);
        }
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Ok(Metrics { positive, tp, fp, tn, fn_, accuracy: (tp + tn) as f64 / total as f64, precision, recall, f1 })
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn counts(predicted: &[Label], gold: &[Label], positive: Label) -> [usize; 4] {
    let mut c = [0; 4];
    for (&p, &g) in predicted.iter().zip(gold) {
        let slot = match (p == positive, g == positive) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        c[slot] += 1;
    }
    c
}

pub fn compute_metrics(predicted: &[Label], gold: &[Label], positive: Label) -> Result<Metrics, HarnessError> {
    if predicted.len() != gold.len() {
        return Err(HarnessError::LengthMismatch { predicted: predicted.len(), gold: gold.len() });
    }
    let [tp, fp, tn, fn_] = counts(predicted, gold, positive);
    Metrics::from_counts(positive, tp, fp, tn, fn_)
}

/// Metrics per family, keyed by family name.
pub fn metrics_by_family(
    predicted: &[Label],
    gold: &[Label],
    families: &[&str],
    positive: Label,
) -> Result<BTreeMap<String, Metrics>, HarnessError> {
    if predicted.len() != gold.len() || families.len() != gold.len() {
        return Err(HarnessError::LengthMismatch { predicted: predicted.len(), gold: gold.len() });
    }
    let mut groups: BTreeMap<&str, (Vec<Label>, Vec<Label>)> = BTreeMap::new();
    for ((&p, &g), &f) in predicted.iter().zip(gold).zip(families) {
        let e = groups.entry(f).or_default();
        e.0.push(p);
        e.1.push(g);
    }
    groups.into_iter().map(|(f, (p, g))| Ok((f.to_string(), compute_metrics(&p, &g, positive)?))).collect()
}

/// Accuracy of always predicting the more frequent gold label (ties go to P).
pub fn majority_baseline(gold: &[Label]) -> Result<f64, HarnessError> {
    if gold.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let n_fail = gold.iter().filter(|&&l| l == Label::F).count();
    Ok(n_fail.max(gold.len() - n_fail) as f64 / gold.len() as f64)
}
