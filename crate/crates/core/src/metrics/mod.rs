//! Evaluation metrics as pure functions over predictions.

mod classification;
mod detection;
mod regression;
mod retrieval;
mod segmentation;

pub use classification::{accuracy, balanced_accuracy, binary_auc, roc_auc, weighted_f1};
pub use detection::{
    average_precision, dice, iou, mean_ap, BBox, Detection, GroundTruth, ImageDetections, Mask, Region,
};
pub use regression::{pearson, pearson_mean};
pub use retrieval::{acc_at_k, majority_vote_acc, RetrievalResult};
pub use segmentation::{segmentation_stats, SegmentationStats};

use std::collections::BTreeMap;

use thiserror::Error;

/// Metric name to value; keys serialize in sorted order.
pub type MetricMap = BTreeMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("only one class present; {0} is undefined")]
    SingleClass(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite score")]
    NonFinite,
    #[error("invalid box ({0}, {1}, {2}, {3}): need x2 > x1 and y2 > y1")]
    BadBox(f64, f64, f64, f64),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
    #[error("need at least {need} items, got {got}")]
    TooFew { need: usize, got: usize },
}

pub(crate) fn check_len(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}
