//! ROC-based metrics for the low false-positive-rate regime.
//!
//! Tied scores always collapse into one operating point, so every metric is
//! invariant to input order.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("need at least 2 scored samples, got {0}")]
    TooFew(usize),
    #[error("single-class split: metrics need both positive and negative labels")]
    SingleClass,
    #[error("label at index {index} must be 0 or 1, got {label}")]
    InvalidLabel { index: usize, label: u8 },
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("fpr_max must lie in (0, 1], got {0}")]
    InvalidFprMax(f64),
}

/// Validated scores with binary labels; both classes present.
#[derive(Debug, Clone, Copy)]
pub struct ScoredLabels<'a> {
    scores: &'a [f64],
    labels: &'a [u8],
    positives: usize,
}

impl<'a> ScoredLabels<'a> {
    pub fn new(scores: &'a [f64], labels: &'a [u8]) -> Result<Self, MetricsError> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.len() < 2 {
            return Err(MetricsError::TooFew(scores.len()));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricsError::NonFinite(i));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(MetricsError::InvalidLabel {
                index: i,
                label: labels[i],
            });
        }
        let positives = labels.iter().filter(|&&l| l == 1).count();
        if positives == 0 || positives == labels.len() {
            return Err(MetricsError::SingleClass);
        }
        Ok(Self {
            scores,
            labels,
            positives,
        })
    }

    pub fn positives(&self) -> usize {
        self.positives
    }

    pub fn negatives(&self) -> usize {
        self.labels.len() - self.positives
    }
}

/// One operating point. `tp`/`fp` are cumulative counts at score >= threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    #[serde(skip)]
    pub tp: usize,
    #[serde(skip)]
    pub fp: usize,
}

/// ROC curve with one point per distinct score, thresholds descending,
/// starting at (0,0) and ending at (1,1).
pub fn roc_curve(data: &ScoredLabels) -> Vec<RocPoint> {
    let mut order: Vec<usize> = (0..data.scores.len()).collect();
    order.sort_by(|&a, &b| data.scores[b].total_cmp(&data.scores[a]));
    let (p, n) = (data.positives() as f64, data.negatives() as f64);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        tp: 0,
        fp: 0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = data.scores[order[i]];
        while i < order.len() && data.scores[order[i]].total_cmp(&score) == Ordering::Equal {
            if data.labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
            tp,
            fp,
        });
    }
    points
}

fn check_fpr_max(fpr_max: f64) -> Result<(), MetricsError> {
    if fpr_max > 0.0 && fpr_max <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidFprMax(fpr_max))
    }
}

/// Highest TPR over real thresholds whose FPR does not exceed `fpr_max`.
/// No interpolation between operating points.
pub fn recall_at_fpr(data: &ScoredLabels, fpr_max: f64) -> Result<f64, MetricsError> {
    check_fpr_max(fpr_max)?;
    Ok(roc_curve(data)
        .iter()
        .filter(|pt| pt.fpr <= fpr_max)
        .map(|pt| pt.tpr)
        .fold(0.0, f64::max))
}

/// How the truncated area is rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncatedNorm {
    /// Area divided by `fpr_max`; perfect = 1, chance = `fpr_max / 2`.
    #[default]
    FprMax,
    /// McClish standardization; perfect = 1, chance = 0.5.
    McClish,
}

/// Trapezoidal ROC area over `fpr in [0, fpr_max]`, interpolating linearly
/// at the cut.
pub fn auroc_truncated(data: &ScoredLabels, fpr_max: f64) -> Result<f64, MetricsError> {
    auroc_truncated_with(data, fpr_max, TruncatedNorm::FprMax)
}

pub fn auroc_truncated_with(
    data: &ScoredLabels,
    fpr_max: f64,
    norm: TruncatedNorm,
) -> Result<f64, MetricsError> {
    check_fpr_max(fpr_max)?;
    let area = truncated_area(&roc_curve(data), fpr_max);
    Ok(match norm {
        TruncatedNorm::FprMax => area / fpr_max,
        TruncatedNorm::McClish => {
            let min = fpr_max * fpr_max / 2.0;
            0.5 * (1.0 + (area - min) / (fpr_max - min))
        }
    })
}

fn truncated_area(points: &[RocPoint], fpr_max: f64) -> f64 {
    let mut area = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.fpr >= fpr_max {
            break;
        }
        if b.fpr <= fpr_max {
            area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
        } else {
            let t = (fpr_max - a.fpr) / (b.fpr - a.fpr);
            let tpr_cut = a.tpr + t * (b.tpr - a.tpr);
            area += (fpr_max - a.fpr) * (a.tpr + tpr_cut) / 2.0;
            break;
        }
    }
    area
}

/// Mann-Whitney AUROC: P(pos > neg) + 0.5 P(tie).
pub fn auroc_full(data: &ScoredLabels) -> f64 {
    let mut order: Vec<usize> = (0..data.scores.len()).collect();
    order.sort_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]));
    // twice the U statistic, kept integral
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let score = data.scores[order[i]];
        let (mut pos, mut neg) = (0u128, 0u128);
        while i < order.len() && data.scores[order[i]].total_cmp(&score) == Ordering::Equal {
            if data.labels[order[i]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
    }
    twice_u as f64 / (2.0 * data.positives() as f64 * data.negatives() as f64)
}

/// Evaluation summary with fixed JSON key names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall_at_fpr1: f64,
    pub auroc_trunc_fpr1: f64,
    pub auroc_trunc_normalization: TruncatedNorm,
    pub auroc_trunc_fpr1_mcclish: f64,
    pub auroc_full: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub roc_points: Option<Vec<RocPoint>>,
}

pub const FPR1: f64 = 0.01;

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<Self, MetricsError> {
        let data = ScoredLabels::new(scores, labels)?;
        Ok(Self {
            recall_at_fpr1: recall_at_fpr(&data, FPR1)?,
            auroc_trunc_fpr1: auroc_truncated_with(&data, FPR1, TruncatedNorm::FprMax)?,
            auroc_trunc_normalization: TruncatedNorm::FprMax,
            auroc_trunc_fpr1_mcclish: auroc_truncated_with(&data, FPR1, TruncatedNorm::McClish)?,
            auroc_full: auroc_full(&data),
            n_pos: data.positives(),
            n_neg: data.negatives(),
            roc_points: None,
        })
    }

    pub fn with_roc_points(mut self, scores: &[f64], labels: &[u8]) -> Result<Self, MetricsError> {
        self.roc_points = Some(roc_curve(&ScoredLabels::new(scores, labels)?));
        Ok(self)
    }
}
