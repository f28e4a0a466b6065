//! Accuracy, sampling bias, expected calibration error, Brier score and
//! AUROC. Natural logarithms throughout.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Per-class counts of a labeled set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram {
    counts: Vec<usize>,
}

impl LabelHistogram {
    pub fn new(counts: Vec<usize>) -> Self {
        Self { counts }
    }

    pub fn from_labels(labels: &[usize], num_classes: usize) -> Self {
        let mut counts = vec![0; num_classes];
        for &l in labels {
            counts[l] += 1;
        }
        Self { counts }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }
}

/// `1 - H(labeled) / ln K`, where `H` is the entropy of the class
/// proportions. 0 is balanced, 1 is single-class. Defined as 0 when `K = 1`.
pub fn sampling_bias(hist: &LabelHistogram) -> Result<f64> {
    let m = hist.total();
    if m == 0 {
        return Err(invalid("sampling bias of an empty histogram"));
    }
    let k = hist.num_classes();
    if k <= 1 {
        return Ok(0.0);
    }
    let m = m as f64;
    let h: f64 = hist
        .counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / m;
            -p * p.ln()
        })
        .sum();
    Ok((1.0 - h / (k as f64).ln()).clamp(0.0, 1.0))
}

/// One equal-width confidence bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Equal-width binning of `[0, 1]`. Bin `s` covers `[s/S, (s+1)/S)`, the
/// last bin also includes 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
    pub total: usize,
}

impl CalibrationBins {
    pub fn compute(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<Self> {
        if confidences.len() != correct.len() {
            return Err(Error::DimensionMismatch {
                expected: confidences.len(),
                got: correct.len(),
            });
        }
        if confidences.is_empty() {
            return Err(invalid("calibration of zero samples"));
        }
        if num_bins == 0 {
            return Err(invalid("need at least one bin"));
        }
        let mut count = vec![0usize; num_bins];
        let mut conf = vec![0.0; num_bins];
        let mut hits = vec![0usize; num_bins];
        for (&c, &ok) in confidences.iter().zip(correct) {
            if !(0.0..=1.0).contains(&c) {
                return Err(invalid(format!("confidence {c} outside [0, 1]")));
            }
            let s = ((c * num_bins as f64) as usize).min(num_bins - 1);
            count[s] += 1;
            conf[s] += c;
            hits[s] += usize::from(ok);
        }
        let width = 1.0 / num_bins as f64;
        let bins = (0..num_bins)
            .map(|s| {
                let n = count[s];
                let (mean_confidence, accuracy) = if n == 0 {
                    (0.0, 0.0)
                } else {
                    (conf[s] / n as f64, hits[s] as f64 / n as f64)
                };
                CalibrationBin {
                    lower: s as f64 * width,
                    upper: if s + 1 == num_bins { 1.0 } else { (s + 1) as f64 * width },
                    count: n,
                    mean_confidence,
                    accuracy,
                }
            })
            .collect();
        Ok(Self {
            bins,
            total: confidences.len(),
        })
    }

    /// `sum_s |B_s|/N * |acc(B_s) - conf(B_s)|`; empty bins contribute 0.
    pub fn ece(&self) -> f64 {
        let n = self.total as f64;
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
            .sum()
    }
}

pub const DEFAULT_ECE_BINS: usize = 15;

pub fn ece(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<f64> {
    Ok(CalibrationBins::compute(confidences, correct, num_bins)?.ece())
}

/// ECE from class probabilities: confidence is the max probability and a
/// prediction is its argmax.
pub fn ece_from_probs(probs: ArrayView2<'_, f64>, labels: &[usize], num_bins: usize) -> Result<f64> {
    let (conf, correct) = confidence_and_correctness(probs, labels)?;
    ece(&conf, &correct, num_bins)
}

pub fn confidence_and_correctness(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(Vec<f64>, Vec<bool>)> {
    if probs.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.nrows(),
            got: labels.len(),
        });
    }
    let pred = crate::nn::argmax_rows(probs);
    let conf = probs
        .rows()
        .into_iter()
        .zip(&pred)
        .map(|(r, &p)| r[p].clamp(0.0, 1.0))
        .collect();
    let correct = pred.iter().zip(labels).map(|(p, y)| p == y).collect();
    Ok((conf, correct))
}

/// Mean over samples of `sum_k (p_k - onehot_k)^2`.
pub fn brier(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let (n, k) = probs.dim();
    if n != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if n == 0 {
        return Err(invalid("Brier score of zero samples"));
    }
    let mut total = 0.0;
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        if y >= k {
            return Err(invalid(format!("label {y} >= {k} classes")));
        }
        total += row
            .iter()
            .enumerate()
            .map(|(j, &p)| {
                let t = if j == y { 1.0 } else { 0.0 };
                (p - t) * (p - t)
            })
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(invalid("accuracy of zero samples"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve with `positive` as the positive class (higher
/// score = more positive). Equals the Mann-Whitney statistic with ties
/// counted as one half; computed from mid-ranks in `O(n log n)`.
pub fn auroc(negative: &[f64], positive: &[f64]) -> Result<f64> {
    if negative.is_empty() || positive.is_empty() {
        return Err(invalid("AUROC needs non-empty negative and positive sets"));
    }
    if negative.iter().chain(positive).any(|v| v.is_nan()) {
        return Err(invalid("AUROC scores contain NaN"));
    }
    let mut all: Vec<(f64, bool)> = negative
        .iter()
        .map(|&s| (s, false))
        .chain(positive.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of positive ranks, doubled so mid-ranks stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share the mid-rank (i + j + 2) / 2.
        let mid2 = (i + j + 2) as u128;
        let pos = all[i..=j].iter().filter(|e| e.1).count() as u128;
        rank_sum2 += mid2 * pos;
        i = j + 1;
    }
    let n_pos = positive.len() as u128;
    let n_neg = negative.len() as u128;
    // U = R_pos - n_pos (n_pos + 1) / 2
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}
