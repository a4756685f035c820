//! Whole-corpus evaluation: slide windows over every image, classify, score.

use rayon::prelude::*;

use crate::classifier::ClassifierModel;
use crate::error::Result;
use crate::inference::{classify_image, image_score, slide_windows, ProbabilityMatrix};
use crate::metrics::{confusion, derive_metrics, roc_auc, MetricsReport, RocCurve};
use crate::tiler::TilerConfig;
use crate::types::{BagLabel, TrainingCorpus};

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub roc: RocCurve,
    pub predictions: Vec<BagLabel>,
    pub scores: Vec<f64>,
    pub matrices: Vec<ProbabilityMatrix>,
}

/// Evaluates `model` on each bag's image and mask using the window lattice
/// in `windows`. Bag order is preserved in the per-image outputs.
pub fn evaluate(
    model: &ClassifierModel,
    corpus: &TrainingCorpus,
    windows: &TilerConfig,
    threshold: f64,
) -> Result<Evaluation> {
    let matrices = corpus
        .bags
        .par_iter()
        .map(|bag| slide_windows(model, &bag.image, &bag.mask, windows))
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<BagLabel> = matrices.iter().map(|m| classify_image(m, threshold)).collect();
    let scores: Vec<f64> = matrices.iter().map(image_score).collect();
    let truths: Vec<BagLabel> = corpus.bags.iter().map(|b| b.label).collect();
    let roc = roc_auc(&scores, &truths)?;
    let report = derive_metrics(confusion(&predictions, &truths)?).with_roc(&roc);
    Ok(Evaluation {
        report,
        roc,
        predictions,
        scores,
        matrices,
    })
}
