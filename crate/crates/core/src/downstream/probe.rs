//! Multinomial logistic-regression probe trained by full-batch gradient
//! descent.

use serde::{Deserialize, Serialize};

use super::{canonical_order, check_labels, to_matrix, DownstreamError};
use crate::numeric::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub max_iters: usize,
    /// Stop once one iteration improves the loss by less than this.
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { lr: 0.1, max_iters: 1000, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// `[d, C]`.
    pub weight: Tensor,
    /// `[1, C]`.
    pub bias: Tensor,
    pub classes: usize,
    pub iterations: usize,
    pub final_loss: f64,
}

/// Mean cross-entropy of `X W + b` against one-hot targets, on the tape.
pub fn probe_loss<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>, onehot: Var<'t>) -> Result<Var<'t>, DownstreamError> {
    let n = x.shape()[0] as f64;
    let logits = x.matmul(&weight)?.add_row(&bias)?;
    Ok(logits.log_softmax(1.0)?.mul(&onehot)?.sum().scale(-1.0 / n))
}

fn onehot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        t.data_mut()[i * classes + y] = 1.0;
    }
    t
}

/// Trains from zero initialization. Rows are processed in a canonical order,
/// so permuting samples together with labels yields an identical model.
pub fn train_linear_probe(
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<LinearProbe, DownstreamError> {
    check_labels(labels, classes, features.len())?;
    let order = canonical_order(features, labels);
    let feats: Vec<Vec<f64>> = order.iter().map(|&i| features[i].clone()).collect();
    let labs: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let x = to_matrix(&feats)?;
    let d = x.dims2().1;
    let y = onehot(&labs, classes);
    let mut weight = Tensor::zeros(&[d, classes]);
    let mut bias = Tensor::zeros(&[1, classes]);
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let mut final_loss = f64::NAN;
    for _ in 0..cfg.max_iters {
        let tape = Tape::new();
        let (w, b) = (tape.param(weight.clone()), tape.param(bias.clone()));
        let loss = probe_loss(tape.constant(x.clone()), w, b, tape.constant(y.clone()))?;
        let lv = loss.value().item();
        final_loss = lv;
        if prev - lv < cfg.tol {
            break;
        }
        prev = lv;
        tape.backward(loss)?;
        for (p, g) in [(&mut weight, w.grad()), (&mut bias, b.grad())] {
            let g = g.expect("trainable leaf");
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= cfg.lr * gv;
            }
        }
        iterations += 1;
    }
    Ok(LinearProbe { weight, bias, classes, iterations, final_loss })
}

impl LinearProbe {
    /// Class probabilities, one row per sample.
    pub fn predict_proba(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DownstreamError> {
        if features.is_empty() {
            return Ok(Vec::new());
        }
        let x = to_matrix(features)?;
        let p = x.matmul(&self.weight)?;
        let mut logits = p;
        let c = self.classes;
        for (k, v) in logits.data_mut().iter_mut().enumerate() {
            *v += self.bias.data()[k % c];
        }
        let probs = logits.softmax_rows(1.0)?;
        Ok((0..features.len()).map(|i| probs.row(i).to_vec()).collect())
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<usize>, DownstreamError> {
        Ok(self.predict_proba(features)?.iter().map(|r| argmax(r)).collect())
    }
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..200 {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            x.push(vec![sign * rng.random_range(0.5..2.0), rng.random_range(-2.0..2.0)]);
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn separable_clusters_reach_full_training_accuracy() {
        let (x, y) = clusters(1);
        let m = train_linear_probe(&x, &y, 2, &ProbeConfig::default()).unwrap();
        assert_eq!(m.predict(&x).unwrap(), y);
        assert!(m.iterations <= 1000);
    }

    #[test]
    fn symmetric_balanced_data_keeps_bias_zero_after_one_step() {
        let x = vec![vec![1.0], vec![-1.0]];
        let m = train_linear_probe(&x, &[1, 0], 2, &ProbeConfig { max_iters: 1, ..ProbeConfig::default() }).unwrap();
        assert_eq!(m.bias.data(), &[0.0, 0.0]);
        assert!(m.weight.data()[1] > 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            train_linear_probe(&x, &[0, 0], 2, &ProbeConfig::default()),
            Err(DownstreamError::SingleClass)
        ));
    }

    #[test]
    fn permutation_gives_identical_model() {
        let (x, y) = clusters(2);
        let a = train_linear_probe(&x, &y, 2, &ProbeConfig::default()).unwrap();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.reverse();
        idx.swap(3, 77);
        let px: Vec<_> = idx.iter().map(|&i| x[i].clone()).collect();
        let py: Vec<_> = idx.iter().map(|&i| y[i]).collect();
        assert_eq!(train_linear_probe(&px, &py, 2, &ProbeConfig::default()).unwrap(), a);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, y) = clusters(3);
        let m = train_linear_probe(&x, &y, 2, &ProbeConfig { max_iters: 20, ..ProbeConfig::default() }).unwrap();
        for r in m.predict_proba(&x).unwrap() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
