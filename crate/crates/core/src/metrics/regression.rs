//! Correlation between predicted and observed continuous targets.

use super::{check_len, MetricError};

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check_len(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(MetricError::TooFew { need: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        log::debug!("zero-variance column in pearson; contributing 0");
        return Ok(0.0);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over columns of the per-column Pearson correlation of `n x G` rows.
pub fn pearson_mean(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64, MetricError> {
    check_len(pred.len(), truth.len())?;
    let g = truth[0].len();
    if g == 0 {
        return Err(MetricError::Empty);
    }
    if let Some(r) = pred.iter().chain(truth).find(|r| r.len() != g) {
        return Err(MetricError::LengthMismatch(g, r.len()));
    }
    let mut sum = 0.0;
    for j in 0..g {
        let a: Vec<f64> = pred.iter().map(|r| r[j]).collect();
        let b: Vec<f64> = truth.iter().map(|r| r[j]).collect();
        sum += pearson(&a, &b)?;
    }
    Ok(sum / g as f64)
}
