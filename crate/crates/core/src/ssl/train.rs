//! Student/teacher state, hyperparameters and the training step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{
    dino_loss, ema_update, ibot_loss, koleo_loss, mean_entropy, sample_token_mask, teacher_probs, update_center, Pairs,
};
use super::model::{encode, head, image_tokens, init_params, register_params, teacher_feature, ModelConfig, Path};
use super::SslError;
use crate::numeric::{clip_global_norm, AdamW, AdamWConfig, ParamSet, Schedule, Tape, Tensor, Var};
use crate::slide::{make_crop_set, CropConfig, CropSet, RgbImage, ViewConfig};

/// Parameters that receive no update during the first
/// `freeze_prototype_epochs` epochs.
pub const PROTOTYPE_PARAMS: [&str; 2] = ["dino_head.prototypes", "ibot_head.prototypes"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslHyper {
    pub model: ModelConfig,
    pub crops: CropConfig,
    pub batch_size: usize,
    pub epochs: u64,
    pub steps_per_epoch: u64,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub lr_warmup_epochs: u64,
    pub teacher_temp_start: f64,
    pub teacher_temp_final: f64,
    pub teacher_temp_warmup_epochs: u64,
    pub student_temp: f64,
    pub momentum_start: f64,
    pub momentum_final: f64,
    pub weight_decay_start: f64,
    pub weight_decay_final: f64,
    pub clip_grad: f64,
    pub freeze_prototype_epochs: u64,
    pub centering: bool,
    pub center_momentum: f64,
    pub mask_ratio: (f64, f64),
    pub dino_weight: f64,
    pub ibot_weight: f64,
    pub koleo_weight: f64,
    pub seed: u64,
}

impl Default for SslHyper {
    /// Desk-scale defaults: optimization constants follow the reference
    /// recipe; view sizes, batch and epoch length are shrunk.
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            crops: CropConfig {
                global: ViewConfig { count: 2, size: 64, scale: (0.48, 1.0) },
                local: ViewConfig { count: 8, size: 32, scale: (0.16, 0.48) },
                ..CropConfig::default()
            },
            batch_size: 8,
            epochs: 20,
            steps_per_epoch: 10,
            lr_start: 0.0,
            lr_peak: 2e-3,
            lr_final: 1e-6,
            lr_warmup_epochs: 2,
            teacher_temp_start: 0.04,
            teacher_temp_final: 0.4,
            teacher_temp_warmup_epochs: 6,
            student_temp: 0.1,
            momentum_start: 0.992,
            momentum_final: 1.0,
            weight_decay_start: 0.04,
            weight_decay_final: 0.4,
            clip_grad: 3.0,
            freeze_prototype_epochs: 1,
            centering: true,
            center_momentum: 0.9,
            mask_ratio: (0.1, 0.5),
            dino_weight: 1.0,
            ibot_weight: 1.0,
            koleo_weight: 0.1,
            seed: 0,
        }
    }
}

impl SslHyper {
    pub fn total_steps(&self) -> u64 {
        self.epochs * self.steps_per_epoch
    }

    pub fn lr_schedule(&self) -> Schedule {
        Schedule::warmup_cosine(
            self.lr_start,
            self.lr_peak,
            self.lr_final,
            self.lr_warmup_epochs * self.steps_per_epoch,
            self.total_steps(),
        )
    }

    /// Cosine over the warmup epochs, then held at the final value.
    pub fn teacher_temp_schedule(&self) -> Schedule {
        Schedule::cosine(
            self.teacher_temp_start,
            self.teacher_temp_final,
            self.teacher_temp_warmup_epochs * self.steps_per_epoch,
        )
    }

    pub fn momentum_schedule(&self) -> Schedule {
        Schedule::cosine(self.momentum_start, self.momentum_final, self.total_steps())
    }

    pub fn weight_decay_schedule(&self) -> Schedule {
        Schedule::cosine(self.weight_decay_start, self.weight_decay_final, self.total_steps())
    }

    pub fn validate(&self) -> Result<(), SslError> {
        let bad = |why: &str| Err(SslError::BadHyper(why.to_string()));
        if self.batch_size == 0 || self.steps_per_epoch == 0 || self.epochs == 0 {
            return bad("batch_size, epochs and steps_per_epoch must be positive");
        }
        if self.crops.global.count == 0 {
            return bad("at least one global view is required");
        }
        if self.koleo_weight > 0.0 && self.batch_size < 2 {
            return bad("koleo needs batch_size >= 2");
        }
        if !(self.student_temp > 0.0 && self.teacher_temp_start > 0.0 && self.teacher_temp_final > 0.0) {
            return bad("temperatures must be positive");
        }
        Ok(())
    }
}

/// Scalar record of one training step; schedule values are the ones applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub total_loss: f64,
    pub dino_loss: f64,
    pub ibot_loss: f64,
    pub koleo_loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub teacher_temp: f64,
    /// Mean entropy (nats) of the centered, sharpened teacher distribution.
    pub teacher_entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SslState {
    pub hyper: SslHyper,
    pub student: ParamSet,
    pub teacher: ParamSet,
    pub dino_center: Tensor,
    pub ibot_center: Tensor,
    pub optimizer: AdamW,
    pub step: u64,
}

impl SslState {
    /// Fresh state; the teacher starts as a copy of the student.
    pub fn new(hyper: SslHyper) -> Result<Self, SslError> {
        hyper.validate()?;
        let student = init_params(&hyper.model, hyper.seed);
        let k = hyper.model.prototypes;
        Ok(Self {
            teacher: student.clone(),
            student,
            dino_center: Tensor::zeros(&[1, k]),
            ibot_center: Tensor::zeros(&[1, k]),
            optimizer: AdamW::new(AdamWConfig::default()),
            step: 0,
            hyper,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.step / self.hyper.steps_per_epoch
    }
}

struct TeacherOut {
    /// `[n_global, K]` DINO logits.
    dino: Tensor,
    /// Per global view, `[T, K]` token logits.
    ibot: Vec<Tensor>,
}

fn teacher_forward(state: &SslState, set: &CropSet) -> Result<TeacherOut, SslError> {
    let cfg = &state.hyper.model;
    let tape = Tape::new();
    let vars = register_params(&tape, &state.teacher, false);
    let mut globals = Vec::new();
    let mut ibot = Vec::new();
    for v in &set.globals {
        let enc = encode(&tape, &vars, cfg, image_tokens(&v.image, cfg)?, None, Path::Teacher)?;
        globals.push(enc.global);
        ibot.push((*head(&vars, "ibot_head", enc.tokens)?.value()).clone());
    }
    let dino = (*head(&vars, "dino_head", Var::concat_rows(&globals)?)?.value()).clone();
    Ok(TeacherOut { dino, ibot })
}

/// `w * mean(terms)` on the tape, or `None` for no terms.
fn weighted_mean<'t>(terms: &[Var<'t>], w: f64) -> Result<Option<Var<'t>>, SslError> {
    let mut acc: Option<Var<'t>> = None;
    for t in terms {
        let s = t.scale(w / terms.len() as f64);
        acc = Some(match acc {
            None => s,
            Some(a) => a.add(&s)?,
        });
    }
    Ok(acc)
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// One optimization step on a batch of crop sets.
///
/// Order: schedules at the current step; losses; backward; clip; drop the
/// prototype gradients while frozen; AdamW; teacher EMA; center updates;
/// step increment. A non-finite loss aborts before any state changes.
pub fn train_step(state: &mut SslState, batch: &[CropSet]) -> Result<StepMetrics, SslError> {
    let h = state.hyper.clone();
    let cfg = &h.model;
    if batch.len() < 2 && h.koleo_weight > 0.0 {
        return Err(SslError::BadHyper("koleo needs at least two samples per batch".into()));
    }
    let step = state.step;
    let lr = h.lr_schedule().value(step);
    let wd = h.weight_decay_schedule().value(step);
    let momentum = h.momentum_schedule().value(step);
    let tau_t = h.teacher_temp_schedule().value_held(step);
    let zero_center = Tensor::zeros(&[1, cfg.prototypes]);
    let (dino_c, ibot_c) =
        if h.centering { (&state.dino_center, &state.ibot_center) } else { (&zero_center, &zero_center) };

    let teacher: Vec<TeacherOut> = batch.iter().map(|s| teacher_forward(state, s)).collect::<Result<_, _>>()?;
    let mut rng = step_rng(h.seed, step);

    let tape = Tape::new();
    let vars = register_params(&tape, &state.student, true);
    let n_global = h.crops.global.count;
    let mut dino_terms = Vec::new();
    let mut ibot_terms = Vec::new();
    let mut per_crop_globals: Vec<Vec<Var<'_>>> = vec![Vec::new(); n_global];
    let mut entropy = 0.0;
    for (set, t_out) in batch.iter().zip(&teacher) {
        if set.globals.len() != n_global {
            return Err(SslError::BadHyper(format!(
                "crop set has {} global views, expected {n_global}",
                set.globals.len()
            )));
        }
        let mut feats = Vec::new();
        for (g, view) in set.globals.iter().enumerate() {
            let mask = sample_token_mask(cfg.tokens(), h.mask_ratio, &mut rng)?;
            let enc = encode(&tape, &vars, cfg, image_tokens(&view.image, cfg)?, Some(&mask), Path::Student)?;
            let s_tok = head(&vars, "ibot_head", enc.tokens)?;
            ibot_terms.push(ibot_loss(s_tok, &t_out.ibot[g], &mask, ibot_c, tau_t, h.student_temp)?);
            per_crop_globals[g].push(enc.global);
            feats.push(enc.global);
        }
        for view in &set.locals {
            feats.push(encode(&tape, &vars, cfg, image_tokens(&view.image, cfg)?, None, Path::Student)?.global);
        }
        let s_logits = head(&vars, "dino_head", Var::concat_rows(&feats)?)?;
        dino_terms.push(dino_loss(s_logits, &t_out.dino, dino_c, tau_t, h.student_temp, Pairs::SkipSameView)?);
        entropy += mean_entropy(&teacher_probs(&t_out.dino, dino_c, tau_t)?);
    }
    entropy /= batch.len() as f64;

    let mean_of = |terms: &[Var<'_>]| -> Result<f64, SslError> {
        Ok(terms.iter().map(|t| t.value().item()).sum::<f64>() / terms.len() as f64)
    };
    let dino_v = mean_of(&dino_terms)?;
    let ibot_v = mean_of(&ibot_terms)?;
    let mut koleo_terms = Vec::new();
    if h.koleo_weight > 0.0 {
        for crop in &per_crop_globals {
            koleo_terms.push(koleo_loss(Var::concat_rows(crop)?)?);
        }
    }
    let koleo_v = if koleo_terms.is_empty() { 0.0 } else { mean_of(&koleo_terms)? };
    let total_v = h.dino_weight * dino_v + h.ibot_weight * ibot_v + h.koleo_weight * koleo_v;
    if !total_v.is_finite() {
        return Err(SslError::NonFiniteLoss { step, dino: dino_v, ibot: ibot_v, koleo: koleo_v });
    }

    let mut total = weighted_mean(&dino_terms, h.dino_weight)?.expect("batch is non-empty");
    for part in
        [weighted_mean(&ibot_terms, h.ibot_weight)?, weighted_mean(&koleo_terms, h.koleo_weight)?].into_iter().flatten()
    {
        total = total.add(&part)?;
    }
    tape.backward(total)?;

    let mut grads: ParamSet =
        vars.iter().map(|(k, v)| (k.clone(), v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape())))).collect();
    let grad_norm = clip_global_norm(grads.values_mut(), h.clip_grad);
    if state.epoch() < h.freeze_prototype_epochs {
        for name in PROTOTYPE_PARAMS {
            grads.remove(name);
        }
    }
    drop(vars);

    state.optimizer.step(&mut state.student, &grads, lr, wd)?;
    ema_update(&mut state.teacher, &state.student, momentum)?;
    if h.centering {
        let dino_all: Vec<Vec<f64>> = teacher
            .iter()
            .flat_map(|t| (0..t.dino.dims2().0).map(|i| t.dino.row(i).to_vec()).collect::<Vec<_>>())
            .collect();
        state.dino_center = update_center(&state.dino_center, &Tensor::from_rows(&dino_all)?, h.center_momentum)?;
        let ibot_all: Vec<Vec<f64>> = teacher
            .iter()
            .flat_map(|t| t.ibot.iter())
            .flat_map(|m| (0..m.dims2().0).map(|i| m.row(i).to_vec()).collect::<Vec<_>>())
            .collect();
        state.ibot_center = update_center(&state.ibot_center, &Tensor::from_rows(&ibot_all)?, h.center_momentum)?;
    }
    let epoch = state.epoch();
    state.step += 1;
    Ok(StepMetrics {
        step,
        epoch,
        total_loss: total_v,
        dino_loss: dino_v,
        ibot_loss: ibot_v,
        koleo_loss: koleo_v,
        grad_norm,
        lr,
        weight_decay: wd,
        momentum,
        teacher_temp: tau_t,
        teacher_entropy: entropy,
    })
}

/// Crop sets for the next step: `batch_size` sources drawn with replacement,
/// each cropped with its own derived seed.
pub fn next_batch(state: &SslState, sources: &[RgbImage]) -> Result<Vec<CropSet>, SslError> {
    if sources.is_empty() {
        return Err(SslError::NoData);
    }
    let h = &state.hyper;
    let mut rng = step_rng(h.seed ^ 0x5eed_c40f, state.step);
    let picks: Vec<(usize, u64)> =
        (0..h.batch_size).map(|_| (rng.random_range(0..sources.len()), rng.random())).collect();
    picks.into_par_iter().map(|(i, seed)| make_crop_set(&sources[i], &h.crops, seed).map_err(SslError::from)).collect()
}

/// Runs `steps` training steps over `sources`.
pub fn pretrain(state: &mut SslState, sources: &[RgbImage], steps: u64) -> Result<Vec<StepMetrics>, SslError> {
    (0..steps)
        .map(|_| {
            let batch = next_batch(state, sources)?;
            train_step(state, &batch)
        })
        .collect()
}

/// Teacher global features, one row per image, in input order.
pub fn extract_features(state: &SslState, images: &[RgbImage]) -> Result<Tensor, SslError> {
    let cfg = &state.hyper.model;
    let size = state.hyper.crops.global.size;
    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| {
            let view = img.resize_bilinear(size, size)?;
            teacher_feature(&state.teacher, cfg, &view)
        })
        .collect::<Result<_, SslError>>()?;
    if rows.is_empty() {
        return Ok(Tensor::zeros(&[0, cfg.embed_dim]));
    }
    Ok(Tensor::from_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::two_cluster_patches;

    fn small_hyper() -> SslHyper {
        SslHyper { batch_size: 4, steps_per_epoch: 2, epochs: 5, ..SslHyper::default() }
    }

    #[test]
    fn step_reports_exact_schedule_values_and_advances() {
        let mut st = SslState::new(small_hyper()).unwrap();
        let src = two_cluster_patches(6, 96, 3);
        let h = st.hyper.clone();
        for s in 0..3 {
            let batch = next_batch(&st, &src).unwrap();
            let m = train_step(&mut st, &batch).unwrap();
            assert_eq!(m.step, s);
            assert_eq!(m.lr, h.lr_schedule().value(s));
            assert_eq!(m.teacher_temp, h.teacher_temp_schedule().value_held(s));
            assert_eq!(m.momentum, h.momentum_schedule().value(s));
            assert_eq!(m.weight_decay, h.weight_decay_schedule().value(s));
        }
        assert_eq!(st.step, 3);
    }

    #[test]
    fn prototypes_frozen_in_first_epoch_only() {
        let mut st = SslState::new(small_hyper()).unwrap();
        let src = two_cluster_patches(6, 96, 4);
        let p0 = st.student["dino_head.prototypes"].clone();
        let w0 = st.student["dino_head.w1"].clone();
        for _ in 0..2 {
            let b = next_batch(&st, &src).unwrap();
            train_step(&mut st, &b).unwrap();
        }
        assert_eq!(st.student["dino_head.prototypes"], p0);
        assert_ne!(st.student["dino_head.w1"], w0);
        let b = next_batch(&st, &src).unwrap();
        train_step(&mut st, &b).unwrap();
        assert_ne!(st.student["dino_head.prototypes"], p0);
    }

    #[test]
    fn training_is_deterministic() {
        let src = two_cluster_patches(6, 96, 5);
        let run = || {
            let mut st = SslState::new(small_hyper()).unwrap();
            pretrain(&mut st, &src, 3).unwrap();
            st
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn koleo_requires_two_samples() {
        let mut h = small_hyper();
        h.batch_size = 1;
        assert!(SslState::new(h.clone()).is_err());
        h.koleo_weight = 0.0;
        assert!(SslState::new(h).is_ok());
    }

    #[test]
    fn features_are_unit_rows_from_teacher() {
        let st = SslState::new(small_hyper()).unwrap();
        let f = extract_features(&st, &two_cluster_patches(3, 96, 6)).unwrap();
        assert_eq!(f.shape(), &[3, 32]);
        for i in 0..3 {
            let n: f64 = f.row(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
