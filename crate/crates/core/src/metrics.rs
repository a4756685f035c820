//! Confusion-matrix metrics, ROC/AUC and the Dice coefficient.
//!
//! Accuracy is (TP + TN) / total and the false positive rate is
//! FP / (FP + TN). Zero denominators produce 0 and set a degenerate flag.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BagLabel, RegionMask};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Positive is the lesion-bearing class.
pub fn confusion(predictions: &[BagLabel], truths: &[BagLabel]) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, t) in predictions.iter().zip(truths) {
        match (p, t) {
            (BagLabel::Positive, BagLabel::Positive) => c.tp += 1,
            (BagLabel::Positive, BagLabel::Negative) => c.fp += 1,
            (BagLabel::Negative, BagLabel::Positive) => c.fn_ += 1,
            (BagLabel::Negative, BagLabel::Negative) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Which derived values hit a zero denominator and were set to 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
    pub accuracy: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1 || self.accuracy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub degenerate: Degenerate,
    pub auc: Option<f64>,
    /// (fpr, tpr) points.
    pub roc: Vec<[f64; 2]>,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn derive_metrics(counts: ConfusionCounts) -> MetricsReport {
    let ConfusionCounts { tp, fp, fn_, tn } = counts;
    let (precision, dp) = ratio(tp, tp + fp);
    let (recall, dr) = ratio(tp, tp + fn_);
    let (f1, df) = if recall + precision > 0.0 {
        (2.0 * recall * precision / (recall + precision), false)
    } else {
        (0.0, true)
    };
    let (accuracy, da) = ratio(tp + tn, counts.total());
    MetricsReport {
        counts,
        precision,
        recall,
        f1,
        accuracy,
        degenerate: Degenerate {
            precision: dp,
            recall: dr,
            f1: df,
            accuracy: da,
        },
        auc: None,
        roc: Vec::new(),
    }
}

impl MetricsReport {
    pub fn with_roc(mut self, curve: &RocCurve) -> Self {
        self.auc = Some(curve.auc);
        self.roc = curve.points.iter().map(|p| [p.fpr, p.tpr]).collect();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores >= threshold are called positive. The (0,0) anchor uses +inf.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Trapezoidal area under (fpr, tpr) points ordered by fpr.
pub fn trapezoid_area(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]) * (w[1][1] + w[0][1]) / 2.0)
        .sum()
}

/// Sweeps thresholds over the distinct scores in descending order; tied
/// scores move the curve as one step.
pub fn roc_auc(scores: &[f64], truths: &[BagLabel]) -> Result<RocCurve> {
    if scores.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: truths.len(),
        });
    }
    let pos = truths.iter().filter(|t| t.is_positive()).count() as f64;
    let neg = truths.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]].total_cmp(&threshold) == Ordering::Equal {
            if truths[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg,
            tpr: tp as f64 / pos,
            threshold,
        });
    }
    let xy: Vec<[f64; 2]> = points.iter().map(|p| [p.fpr, p.tpr]).collect();
    Ok(RocCurve {
        auc: trapezoid_area(&xy),
        points,
    })
}

/// ROC points as CSV with header `fpr,tpr,threshold`.
pub fn write_roc_csv(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "fpr,tpr,threshold")?;
    for p in &curve.points {
        writeln!(f, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
    }
    f.flush()?;
    Ok(())
}

/// 2|A∩B| / (|A|+|B|); two empty masks score 1.
pub fn dice(a: &RegionMask, b: &RegionMask) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            found: b.shape(),
        });
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}
