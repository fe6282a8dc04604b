use serde::{Deserialize, Serialize};

use super::HarnessError;

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), HarnessError> {
    if scores.len() != labels.len() {
        return Err(HarnessError::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(HarnessError::Metric(format!("score {i} is NaN")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(HarnessError::Metric(format!(
            "both classes are required, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half. Uses mid-ranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, HarnessError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    /// No positive predictions: precision (and F1) reported as 0.
    pub precision_undefined: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    /// A score at or above `threshold` predicts positive.
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn metrics(&self) -> ThresholdMetrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision_undefined = self.tp + self.fp == 0;
        let precision = ratio(self.tp, self.tp + self.fp);
        let sensitivity = ratio(self.tp, self.tp + self.fn_);
        let specificity = ratio(self.tn, self.tn + self.fp);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            0.0
        };
        ThresholdMetrics {
            precision,
            sensitivity,
            specificity,
            f1,
            precision_undefined,
        }
    }
}

pub fn threshold_metrics(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<ThresholdMetrics, HarnessError> {
    check_inputs(scores, labels)?;
    Ok(Confusion::at(scores, labels, threshold).metrics())
}

/// Mean silhouette coefficient of `points` grouped by `labels` (Euclidean).
pub fn silhouette(points: &[Vec<f64>], labels: &[bool]) -> Result<f64, HarnessError> {
    let dummy = vec![0.0; points.len()];
    check_inputs(&dummy, labels)?;
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (mut same, mut n_same, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize);
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = dist(p, q);
            if labels[i] == labels[j] {
                same += d;
                n_same += 1;
            } else {
                other += d;
                n_other += 1;
            }
        }
        if n_same == 0 {
            continue; // singleton cluster scores 0
        }
        let a = same / n_same as f64;
        let b = other / n_other as f64;
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / points.len() as f64)
}

/// Mean and sample standard deviation (`n - 1`); the deviation of a single
/// value is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}
