use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(labels: &[bool], predicted: &[bool]) -> Result<Self, EvalError> {
        if labels.len() != predicted.len() {
            return Err(EvalError::LengthMismatch {
                labels: labels.len(),
                scores: predicted.len(),
            });
        }
        let mut c = ConfusionCounts::default();
        for (&y, &p) in labels.iter().zip(predicted) {
            match (y, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Threshold metrics plus AUC. Ratios with a zero denominator are reported
/// as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub auc: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl Metrics {
    pub fn from_counts(counts: ConfusionCounts, auc: f64) -> Self {
        let c = counts;
        let accuracy = ratio(c.tp + c.tn, c.total());
        let recall = ratio(c.tp, c.tp + c.fn_);
        let precision = ratio(c.tp, c.tp + c.fp);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            counts,
            accuracy,
            recall,
            precision,
            f1,
            auc,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.recall, self.precision, self.f1, self.auc]
    }
}

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "recall", "precision", "f1", "auc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub case: String,
    pub zone: usize,
    pub metrics: Metrics,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, computed from mid-ranks.
pub fn auc(labels: &[bool], scores: &[f64]) -> Result<f64, EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClassAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Predictions are `score > threshold`.
pub fn compute_metrics(labels: &[bool], scores: &[f64], threshold: f64) -> Result<Metrics, EvalError> {
    let a = auc(labels, scores)?;
    let predicted: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    Ok(Metrics::from_counts(
        ConfusionCounts::from_predictions(labels, &predicted)?,
        a,
    ))
}
