//! Weakly supervised lesion classification by multiple-instance learning.
//!
//! An image is a bag of fixed-size tiles drawn from its region of interest.
//! A small CNN is trained on the most confident tiles of each bag, optionally
//! reinforced by tiles cut from box annotations, and applied as a sliding
//! window at inference time to produce an image label and a heatmap.

pub mod classifier;
pub mod error;
pub mod experiment;
pub mod imageio;
pub mod inference;
pub mod manifest;
pub mod metrics;
pub mod mil;
pub mod report;
pub mod segment;
pub mod synth;
pub mod tiler;
pub mod types;

pub use classifier::{init_model, load_model, predict, predict_bag, save_model, Architecture, ClassifierModel, TrainConfig};
pub use error::{Error, Result};
pub use experiment::{evaluate, Evaluation};
pub use inference::{classify_image, render_heatmap, slide_windows, Fusion, Heatmap, ProbabilityMatrix};
pub use manifest::{load_corpus, read_manifest, LoadOptions, ManifestRow, MaskMode};
pub use metrics::{confusion, derive_metrics, dice, roc_auc, ConfusionCounts, MetricsReport, RocCurve};
pub use mil::{select_instances, train, MilConfig, SelectionConfig, TemporarySet, TrainingHistory};
pub use segment::{postprocess_mask, segment, Provider, SegmenterConfig};
pub use synth::{describe, generate, GenConfig};
pub use tiler::{extract_reinforced_tiles, partition_tiles, TilerConfig};
pub use types::*;

pub use image::{RgbImage, RgbaImage};
