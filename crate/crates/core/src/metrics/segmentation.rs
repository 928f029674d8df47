//! Pixel-level statistics from a confusion matrix.

use serde::{Deserialize, Serialize};

use super::{check_len, MetricError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationStats {
    /// Per-class pixel accuracy; `None` for classes absent from the truth.
    pub cpa: Vec<Option<f64>>,
    /// Mean of the defined `cpa` entries.
    pub mpa: f64,
    /// Per-class IoU; `None` when the class is absent from truth and prediction.
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub dice: Vec<Option<f64>>,
    pub mean_dice: f64,
    /// Mean precision over classes that are predicted at least once.
    pub macro_precision: f64,
    /// Equal to `mpa`: recall of a class is its pixel accuracy.
    pub macro_recall: f64,
    /// `confusion[t][p]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
}

fn mean_defined(v: &[Option<f64>]) -> f64 {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    if d.is_empty() {
        0.0
    } else {
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Label grids are flattened row-major; both must have the same length.
pub fn segmentation_stats(pred: &[usize], truth: &[usize], classes: usize) -> Result<SegmentationStats, MetricError> {
    check_len(pred.len(), truth.len())?;
    if let Some(&label) = pred.iter().chain(truth).find(|&&l| l >= classes) {
        return Err(MetricError::LabelOutOfRange { label, classes });
    }
    let mut cm = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t][p] += 1;
    }
    let mut cpa = Vec::with_capacity(classes);
    let mut iou = Vec::with_capacity(classes);
    let mut dice = Vec::with_capacity(classes);
    let mut precision = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = cm[c][c];
        let true_c: u64 = cm[c].iter().sum();
        let pred_c: u64 = cm.iter().map(|r| r[c]).sum();
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        cpa.push(ratio(tp, true_c));
        precision.push(ratio(tp, pred_c));
        iou.push(ratio(tp, true_c + pred_c - tp));
        dice.push(ratio(2 * tp, true_c + pred_c));
    }
    let mpa = mean_defined(&cpa);
    Ok(SegmentationStats {
        mpa,
        miou: mean_defined(&iou),
        mean_dice: mean_defined(&dice),
        macro_precision: mean_defined(&precision),
        macro_recall: mpa,
        cpa,
        iou,
        dice,
        confusion: cm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_grids_are_perfect() {
        let g = [0, 1, 2, 2, 1, 0];
        let s = segmentation_stats(&g, &g, 4).unwrap();
        assert_eq!((s.mpa, s.miou, s.mean_dice), (1.0, 1.0, 1.0));
        assert_eq!(s.cpa[3], None);
    }

    #[test]
    fn one_wrong_pixel() {
        let s = segmentation_stats(&[0, 0, 1, 1], &[0, 0, 0, 1], 2).unwrap();
        assert_eq!(s.cpa, vec![Some(2.0 / 3.0), Some(1.0)]);
        assert!((s.mpa - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(s.iou, vec![Some(2.0 / 3.0), Some(0.5)]);
    }

    #[test]
    fn class_only_in_prediction_has_no_pixel_accuracy() {
        let s = segmentation_stats(&[0, 2], &[0, 0], 3).unwrap();
        assert_eq!(s.cpa, vec![Some(0.5), None, None]);
        assert_eq!(s.mpa, 0.5);
        assert_eq!(s.iou[2], Some(0.0));
    }
}
