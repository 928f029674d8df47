//! Self-distillation objectives, teacher centering, EMA and token masking.

use rand::Rng;

use super::SslError;
use crate::numeric::{ParamSet, Tape, Tensor, TensorError, Var};

/// Floor on nearest-neighbour distances in the KoLeo term.
pub const KOLEO_EPS: f64 = 1e-8;

/// Which teacher/student view pairs enter the cross-view loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairs {
    /// Every teacher row against every student row.
    All,
    /// Skip pair `(i, i)`: teacher view `i` and student view `i` are the same
    /// crop.
    SkipSameView,
}

fn check_k(student: &[usize], teacher: &[usize]) -> Result<(), SslError> {
    if student.len() != 2 || teacher.len() != 2 || student[1] != teacher[1] {
        return Err(SslError::PrototypeMismatch { student: student.to_vec(), teacher: teacher.to_vec() });
    }
    Ok(())
}

/// Sharpened, centered teacher distribution `softmax((t - c) / tau_t)`.
pub fn teacher_probs(teacher_logits: &Tensor, center: &Tensor, tau_t: f64) -> Result<Tensor, SslError> {
    let (_, k) = teacher_logits.dims2();
    if center.numel() != k {
        return Err(SslError::PrototypeMismatch {
            student: center.shape().to_vec(),
            teacher: teacher_logits.shape().to_vec(),
        });
    }
    let mut centered = teacher_logits.clone();
    for (i, v) in centered.data_mut().iter_mut().enumerate() {
        *v -= center.data()[i % k];
    }
    Ok(centered.softmax_rows(tau_t)?)
}

/// Mean over the selected pairs of `-sum_k p_t log p_s`, with the teacher
/// side detached.
pub fn dino_loss<'t>(
    student_logits: Var<'t>,
    teacher_logits: &Tensor,
    center: &Tensor,
    tau_t: f64,
    tau_s: f64,
    pairs: Pairs,
) -> Result<Var<'t>, SslError> {
    check_k(&student_logits.shape(), teacher_logits.shape())?;
    let pt = teacher_probs(teacher_logits, center, tau_t)?;
    let (nt, k) = pt.dims2();
    let ns = student_logits.shape()[0];
    let mut weights = Tensor::zeros(&[ns, k]);
    let mut n_pairs = 0usize;
    for i in 0..nt {
        for j in 0..ns {
            if pairs == Pairs::SkipSameView && i == j {
                continue;
            }
            n_pairs += 1;
            for (w, p) in weights.data_mut()[j * k..(j + 1) * k].iter_mut().zip(pt.row(i)) {
                *w += p;
            }
        }
    }
    if n_pairs == 0 {
        return Err(SslError::NoViewPairs);
    }
    let lsm = student_logits.log_softmax(tau_s)?;
    let w = student_logits.tape().constant(weights);
    Ok(lsm.mul(&w)?.sum().scale(-1.0 / n_pairs as f64))
}

/// Masked-token objective: mean over masked positions of
/// `-sum_k p_t log p_s`. Zero when nothing is masked.
pub fn ibot_loss<'t>(
    student_token_logits: Var<'t>,
    teacher_token_logits: &Tensor,
    mask: &[bool],
    center: &Tensor,
    tau_t: f64,
    tau_s: f64,
) -> Result<Var<'t>, SslError> {
    let s_shape = student_token_logits.shape();
    check_k(&s_shape, teacher_token_logits.shape())?;
    if mask.len() != s_shape[0] || mask.len() != teacher_token_logits.dims2().0 {
        return Err(SslError::MaskLength { mask: mask.len(), tokens: s_shape[0] });
    }
    let tape: &Tape = student_token_logits.tape();
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if idx.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let pt = teacher_probs(teacher_token_logits, center, tau_t)?;
    let (_, k) = pt.dims2();
    let mut sel = Vec::with_capacity(idx.len() * k);
    for &i in &idx {
        sel.extend_from_slice(pt.row(i));
    }
    let w = tape.constant(Tensor::new(vec![idx.len(), k], sel)?);
    let lsm = student_token_logits.select_rows(&idx)?.log_softmax(tau_s)?;
    Ok(lsm.mul(&w)?.sum().scale(-1.0 / idx.len() as f64))
}

/// Index of each row's nearest other row (lowest index on ties). Rows with
/// non-finite distances still get a neighbour; the caller's loss check
/// reports the divergence.
fn nearest_neighbours(x: &Tensor) -> Vec<usize> {
    let (n, _) = x.dims2();
    (0..n)
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in (0..n).filter(|&j| j != i) {
                let d: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                if best.1 == usize::MAX || d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// KoLeo spreading term `-(1/n) sum_i log max(d_i, eps)` over l2-normalized
/// rows, `d_i` the distance to the nearest other row.
pub fn koleo_loss(features: Var<'_>) -> Result<Var<'_>, SslError> {
    let n = features.shape()[0];
    if n < 2 {
        return Err(SslError::KoleoTooFew(n));
    }
    let x = features.l2_normalize();
    let nn = nearest_neighbours(&x.value());
    let diff = x.sub(&x.select_rows(&nn)?)?;
    let dist = diff.mul(&diff)?.sum_cols().clamp_min(KOLEO_EPS * KOLEO_EPS).sqrt();
    Ok(dist.ln().mean().scale(-1.0))
}

/// `c <- m c + (1 - m) mean_rows(teacher_logits)`.
pub fn update_center(center: &Tensor, teacher_logits: &Tensor, momentum: f64) -> Result<Tensor, SslError> {
    let mean = teacher_logits.mean_rows();
    if mean.numel() != center.numel() {
        return Err(TensorError::ShapeMismatch {
            op: "update_center",
            lhs: center.shape().to_vec(),
            rhs: teacher_logits.shape().to_vec(),
        }
        .into());
    }
    let data = center.data().iter().zip(mean.data()).map(|(c, m)| momentum * c + (1.0 - momentum) * m).collect();
    Ok(Tensor::new(center.shape().to_vec(), data)?)
}

/// `t <- m t + (1 - m) s` for every parameter of the teacher.
pub fn ema_update(teacher: &mut ParamSet, student: &ParamSet, momentum: f64) -> Result<(), SslError> {
    for (name, t) in teacher.iter_mut() {
        let s = student.get(name).ok_or_else(|| SslError::MissingParam(name.clone()))?;
        for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = momentum * *a + (1.0 - momentum) * b;
        }
    }
    Ok(())
}

/// Masks `round(r * tokens)` distinct positions, `r ~ U[ratio.0, ratio.1]`.
pub fn sample_token_mask(tokens: usize, ratio: (f64, f64), rng: &mut impl Rng) -> Result<Vec<bool>, SslError> {
    let (lo, hi) = ratio;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(SslError::BadMaskRatio(lo, hi));
    }
    let r = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let count = ((r * tokens as f64).round() as usize).min(tokens);
    let mut mask = vec![false; tokens];
    for i in rand::seq::index::sample(rng, tokens, count) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Mean Shannon entropy (nats) of the rows of a probability matrix.
pub fn mean_entropy(probs: &Tensor) -> f64 {
    let (r, _) = probs.dims2();
    let total: f64 = (0..r).map(|i| -probs.row(i).iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()).sum();
    total / r as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_distributions_give_ln_k() {
        let tape = Tape::new();
        let s = tape.param(Tensor::zeros(&[1, 2]));
        let loss = dino_loss(s, &Tensor::zeros(&[1, 2]), &Tensor::zeros(&[2]), 0.04, 0.1, Pairs::All).unwrap();
        assert!((loss.value().item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn prototype_count_mismatch_is_rejected() {
        let tape = Tape::new();
        let s = tape.param(Tensor::zeros(&[2, 3]));
        let t = Tensor::zeros(&[2, 4]);
        assert!(matches!(
            dino_loss(s, &t, &Tensor::zeros(&[4]), 0.04, 0.1, Pairs::All),
            Err(SslError::PrototypeMismatch { .. })
        ));
    }

    #[test]
    fn same_view_pairs_are_excluded() {
        // Teacher view 0 is one-hot on prototype 0; student view 0 would match
        // it perfectly but must not count. Student view 1 is uniform.
        let tape = Tape::new();
        let s = tape.param(Tensor::from_rows(&[vec![100.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let t = Tensor::from_rows(&[vec![100.0, 0.0]]).unwrap();
        let loss = dino_loss(s, &t, &Tensor::zeros(&[2]), 1.0, 1.0, Pairs::SkipSameView).unwrap();
        assert!((loss.value().item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ibot_empty_mask_is_zero_and_length_checked() {
        let tape = Tape::new();
        let s = tape.param(Tensor::zeros(&[3, 4]));
        let t = Tensor::zeros(&[3, 4]);
        let c = Tensor::zeros(&[4]);
        assert_eq!(ibot_loss(s, &t, &[false; 3], &c, 0.04, 0.1).unwrap().value().item(), 0.0);
        assert!(ibot_loss(s, &t, &[true; 2], &c, 0.04, 0.1).is_err());
        let uniform = ibot_loss(s, &t, &[true, false, true], &c, 0.04, 0.1).unwrap();
        assert!((uniform.value().item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn koleo_closed_forms() {
        let tape = Tape::new();
        let ortho = tape.param(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let v = koleo_loss(ortho).unwrap().value().item();
        assert!((v + 0.346_573_590_279_972_6).abs() < 1e-12);

        let same = tape.param(Tensor::from_rows(&[vec![0.3, 0.4], vec![0.3, 0.4]]).unwrap());
        let v = koleo_loss(same).unwrap().value().item();
        assert!((v + KOLEO_EPS.ln()).abs() < 1e-9, "{v}");

        let one = tape.param(Tensor::zeros(&[1, 2]));
        assert!(matches!(koleo_loss(one), Err(SslError::KoleoTooFew(1))));
    }

    #[test]
    fn non_finite_rows_still_get_a_neighbour() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[vec![f64::NAN, 0.0], vec![f64::NAN, 1.0], vec![1.0, 0.0]]).unwrap());
        assert!(koleo_loss(x).is_ok());
    }

    #[test]
    fn unit_spaced_points_give_zero() {
        // Equilateral triangle with side 1 on the unit sphere in 3-D.
        let r = 1.0 / 3f64.sqrt();
        let h = (1.0 - r * r).sqrt();
        let pts: Vec<Vec<f64>> = (0..3)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / 3.0;
                vec![r * a.cos(), r * a.sin(), h]
            })
            .collect();
        let tape = Tape::new();
        let v = koleo_loss(tape.param(Tensor::from_rows(&pts).unwrap())).unwrap().value().item();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn center_update_example() {
        let c = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let t = Tensor::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let n = update_center(&c, &t, 0.9).unwrap();
        assert!((n.data()[0] - 0.9).abs() < 1e-15 && (n.data()[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn ema_converges_geometrically() {
        let mut t = ParamSet::from([("w".to_string(), Tensor::scalar(0.0))]);
        let s = ParamSet::from([("w".to_string(), Tensor::scalar(1.0))]);
        for _ in 0..100 {
            ema_update(&mut t, &s, 0.992).unwrap();
        }
        let expected = 1.0 - 0.992f64.powi(100);
        assert!((t["w"].item() - expected).abs() < 1e-12);
    }

    #[test]
    fn forced_mask_ratios_round_to_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let count = |m: Vec<bool>| m.iter().filter(|&&b| b).count();
        assert_eq!(count(sample_token_mask(16, (0.1, 0.1), &mut rng).unwrap()), 2);
        assert_eq!(count(sample_token_mask(16, (0.5, 0.5), &mut rng).unwrap()), 8);
        for _ in 0..100 {
            let c = count(sample_token_mask(16, (0.1, 0.5), &mut rng).unwrap());
            assert!((2..=8).contains(&c));
        }
        assert!(sample_token_mask(16, (0.6, 0.2), &mut rng).is_err());
    }
}
