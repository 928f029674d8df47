//! Label and score metrics for classification.

use super::{check_len, MetricError};

fn classes_of(truth: &[usize], pred: &[usize]) -> usize {
    truth.iter().chain(pred).max().map_or(0, |m| m + 1)
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64, MetricError> {
    check_len(truth.len(), pred.len())?;
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean per-class recall over the classes that occur in `truth`.
pub fn balanced_accuracy(truth: &[usize], pred: &[usize]) -> Result<f64, MetricError> {
    check_len(truth.len(), pred.len())?;
    let c = classes_of(truth, pred);
    let mut support = vec![0usize; c];
    let mut hits = vec![0usize; c];
    for (&t, &p) in truth.iter().zip(pred) {
        support[t] += 1;
        hits[t] += usize::from(t == p);
    }
    let recalls: Vec<f64> = (0..c).filter(|&k| support[k] > 0).map(|k| hits[k] as f64 / support[k] as f64).collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Support-weighted mean of per-class F1, with 0/0 taken as 0.
pub fn weighted_f1(truth: &[usize], pred: &[usize]) -> Result<f64, MetricError> {
    check_len(truth.len(), pred.len())?;
    let c = classes_of(truth, pred);
    let (mut tp, mut fp, mut fn_) = (vec![0usize; c], vec![0usize; c], vec![0usize; c]);
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let n = truth.len() as f64;
    Ok((0..c)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fn_[k];
            let f1 = if denom == 0 { 0.0 } else { 2.0 * tp[k] as f64 / denom as f64 };
            (tp[k] + fn_[k]) as f64 / n * f1
        })
        .sum())
}

/// Mann-Whitney AUC: `P(s+ > s-) + P(s+ = s-) / 2`.
///
/// Pair counts are exact integers, and the value is formed so that flipping
/// every label maps the result `a` to exactly `1 - a`.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64, MetricError> {
    check_len(scores.len(), positive.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the number of winning pairs plus ties
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if positive[idx[j]] {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        doubled += 2 * p * neg_below + p * q;
        neg_below += q;
        i = j;
    }
    let pos = positive.iter().filter(|&&b| b).count() as u128;
    let neg = positive.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass("AUC"));
    }
    let total = 2 * pos * neg;
    Ok(if 2 * doubled <= total { doubled as f64 / total as f64 } else { 1.0 - (total - doubled) as f64 / total as f64 })
}

/// Binary AUC on the class-1 score when there are two columns, otherwise the
/// unweighted mean of one-vs-rest AUCs over classes present in `truth`
/// (classes with no positives are skipped).
pub fn roc_auc(scores: &[Vec<f64>], truth: &[usize]) -> Result<f64, MetricError> {
    check_len(scores.len(), truth.len())?;
    let c = scores[0].len();
    if let Some(r) = scores.iter().find(|r| r.len() != c) {
        return Err(MetricError::LengthMismatch(c, r.len()));
    }
    if let Some(&label) = truth.iter().find(|&&t| t >= c) {
        return Err(MetricError::LabelOutOfRange { label, classes: c });
    }
    let column = |k: usize| scores.iter().map(|r| r[k]).collect::<Vec<_>>();
    let is = |k: usize| truth.iter().map(|&t| t == k).collect::<Vec<_>>();
    if c == 2 {
        return binary_auc(&column(1), &is(1));
    }
    let present: Vec<usize> = (0..c).filter(|&k| truth.contains(&k)).collect();
    if present.len() < 2 {
        return Err(MetricError::SingleClass("AUC"));
    }
    let aucs = present.iter().map(|&k| binary_auc(&column(k), &is(k))).collect::<Result<Vec<_>, _>>()?;
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_count_auc(s: &[f64], y: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 0, 1, 0]).unwrap(), 0.75);
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0, 0, 1], &[0, 0, 0, 0, 0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn weighted_f1_examples() {
        let got = weighted_f1(&[0, 0, 0, 1], &[0, 0, 1, 1]).unwrap();
        assert!((got - (3.0 * 0.8 + 2.0 / 3.0) / 4.0).abs() < 1e-15);
        assert_eq!(weighted_f1(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        // class 2 is predicted but never true, so it carries no weight
        assert_eq!(weighted_f1(&[0, 1], &[0, 2]).unwrap(), 0.5);
    }

    #[test]
    fn auc_examples() {
        let y = [true, true, false, false];
        assert_eq!(binary_auc(&[0.9, 0.8, 0.3, 0.2], &y).unwrap(), 1.0);
        assert_eq!(binary_auc(&[0.5; 4], &y).unwrap(), 0.5);
        assert!(matches!(binary_auc(&[0.1, 0.2], &[true, true]), Err(MetricError::SingleClass(_))));
    }

    #[test]
    fn multiclass_auc_is_macro_one_vs_rest() {
        let s = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8], vec![0.6, 0.3, 0.1]];
        assert_eq!(roc_auc(&s, &[0, 1, 2, 0]).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(s in prop::collection::vec(0u8..6, 20), y in prop::collection::vec(any::<bool>(), 20)) {
            prop_assume!(y.iter().any(|&b| b) && y.iter().any(|&b| !b));
            let s: Vec<f64> = s.iter().map(|&v| v as f64 / 5.0).collect();
            prop_assert!((binary_auc(&s, &y).unwrap() - pair_count_auc(&s, &y)).abs() <= 1e-12);
        }

        #[test]
        fn flipped_labels_sum_to_one_exactly(s in prop::collection::vec(-1e3f64..1e3, 2..60), seed in any::<u64>()) {
            let y: Vec<bool> = (0..s.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            prop_assume!(y.iter().any(|&b| b) && y.iter().any(|&b| !b));
            let flip: Vec<bool> = y.iter().map(|b| !b).collect();
            prop_assert_eq!(binary_auc(&s, &y).unwrap() + binary_auc(&s, &flip).unwrap(), 1.0);
        }

        #[test]
        fn auc_is_invariant_to_monotone_transforms_and_permutation(
            s in prop::collection::vec(-3f64..3.0, 2..40),
            seed in any::<u64>(),
        ) {
            let y: Vec<bool> = (0..s.len()).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            prop_assume!(y.iter().any(|&b| b) && y.iter().any(|&b| !b));
            let base = binary_auc(&s, &y).unwrap();
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 2.0 + 1.0).collect();
            prop_assert_eq!(binary_auc(&t, &y).unwrap(), base);
            let (rs, ry): (Vec<f64>, Vec<bool>) = s.iter().copied().zip(y.iter().copied()).rev().unzip();
            prop_assert_eq!(binary_auc(&rs, &ry).unwrap(), base);
        }

        #[test]
        fn label_metrics_are_permutation_invariant(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..50)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let (rt, rp): (Vec<usize>, Vec<usize>) = pairs.iter().rev().copied().unzip();
            prop_assert_eq!(accuracy(&t, &p).unwrap(), accuracy(&rt, &rp).unwrap());
            prop_assert!((balanced_accuracy(&t, &p).unwrap() - balanced_accuracy(&rt, &rp).unwrap()).abs() < 1e-15);
            prop_assert!((weighted_f1(&t, &p).unwrap() - weighted_f1(&rt, &rp).unwrap()).abs() < 1e-15);
            prop_assert_eq!(balanced_accuracy(&t, &t).unwrap(), 1.0);
        }
    }
}
