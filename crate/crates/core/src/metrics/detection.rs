//! Overlap measures and mean average precision for boxes and masks.

use serde::{Deserialize, Serialize};

use super::MetricError;

/// Axis-aligned box `(x1, y1, x2, y2)` with `x2 > x1` and `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, MetricError> {
        if !(x2 > x1 && y2 > y1) {
            return Err(MetricError::BadBox(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    fn intersection(&self, o: &Self) -> f64 {
        let w = (self.x2.min(o.x2) - self.x1.max(o.x1)).max(0.0);
        let h = (self.y2.min(o.y2) - self.y1.max(o.y1)).max(0.0);
        w * h
    }
}

/// Boolean grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, MetricError> {
        if bits.len() != width * height {
            return Err(MetricError::Geometry(format!("{} bits for a {width}x{height} mask", bits.len())));
        }
        Ok(Self { width, height, bits })
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    fn overlap(&self, o: &Self) -> Result<(usize, usize), MetricError> {
        if (self.width, self.height) != (o.width, o.height) {
            return Err(MetricError::Geometry(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, o.width, o.height
            )));
        }
        let inter = self.bits.iter().zip(&o.bits).filter(|(a, b)| **a && **b).count();
        Ok((inter, self.count() + o.count()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Box(BBox),
    Mask(Mask),
}

/// Intersection and summed size `|a| + |b|`.
fn overlap(a: &Region, b: &Region) -> Result<(f64, f64), MetricError> {
    match (a, b) {
        (Region::Box(a), Region::Box(b)) => Ok((a.intersection(b), a.area() + b.area())),
        (Region::Mask(a), Region::Mask(b)) => a.overlap(b).map(|(i, s)| (i as f64, s as f64)),
        _ => Err(MetricError::Geometry("box compared with mask".into())),
    }
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks give 1.
pub fn iou(a: &Region, b: &Region) -> Result<f64, MetricError> {
    let (inter, sum) = overlap(a, b)?;
    let union = sum - inter;
    Ok(if union == 0.0 { 1.0 } else { inter / union })
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks give 1.
pub fn dice(a: &Region, b: &Region) -> Result<f64, MetricError> {
    let (inter, sum) = overlap(a, b)?;
    Ok(if sum == 0.0 { 1.0 } else { 2.0 * inter / sum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub class: usize,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub confidence: f64,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageDetections {
    pub ground_truth: Vec<GroundTruth>,
    pub predictions: Vec<Detection>,
}

/// All-point interpolated AP for one class, or `None` when the class has no
/// ground truth.
///
/// Predictions are taken by descending confidence (ties in image, then list
/// order); each one claims the unmatched same-image ground truth of highest
/// IoU (first on ties) if that IoU reaches `threshold`. Predictions sharing a
/// confidence form one operating point.
pub fn average_precision(images: &[ImageDetections], class: usize, threshold: f64) -> Result<Option<f64>, MetricError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricError::BadThreshold(threshold));
    }
    let total_gt = images.iter().flat_map(|im| &im.ground_truth).filter(|g| g.class == class).count();
    if total_gt == 0 {
        return Ok(None);
    }
    let mut preds: Vec<(usize, &Detection)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| im.predictions.iter().map(move |p| (i, p)))
        .filter(|(_, p)| p.class == class)
        .collect();
    if preds.iter().any(|(_, p)| !p.confidence.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    preds.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence));
    let mut matched: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.ground_truth.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (k, (img, p)) in preds.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in images[*img].ground_truth.iter().enumerate() {
            if gt.class != class || matched[*img][g] {
                continue;
            }
            let v = iou(&p.region, &gt.region)?;
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                matched[*img][g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        let group_end = preds.get(k + 1).is_none_or(|(_, q)| q.confidence != p.confidence);
        if group_end {
            points.push((tp as f64 / total_gt as f64, tp as f64 / (tp + fp) as f64));
        }
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for k in (0..points.len()).rev() {
        envelope = envelope.max(points[k].1);
        let prev_recall = if k == 0 { 0.0 } else { points[k - 1].0 };
        ap += (points[k].0 - prev_recall) * envelope;
    }
    Ok(Some(ap))
}

/// Mean AP over classes that have ground truth somewhere in `images`.
pub fn mean_ap(images: &[ImageDetections], threshold: f64) -> Result<f64, MetricError> {
    let mut classes: Vec<usize> = images.iter().flat_map(|im| &im.ground_truth).map(|g| g.class).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = 0.0;
    for &c in &classes {
        sum += average_precision(images, c, threshold)?.expect("class has ground truth");
    }
    Ok(sum / classes.len() as f64)
}
