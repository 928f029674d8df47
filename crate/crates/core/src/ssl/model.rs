//! Token-grid encoder and projection heads.
//!
//! A view is pooled into a `grid x grid` token grid; each token carries the
//! mean RGB of a `pool x pool` sub-grid of its cell, scaled to `[0, 1]`. The
//! encoder embeds tokens linearly, optionally swaps masked tokens for a
//! learned mask embedding, then applies `depth` residual blocks (token-mixing
//! linear, per-token MLP, layer norms). The global feature is the
//! l2-normalized token mean.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SslError;
use crate::numeric::{ParamSet, Tape, Tensor, Var};
use crate::slide::RgbImage;

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: usize,
    pub pool: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub mlp_hidden: usize,
    pub head_hidden: usize,
    pub bottleneck: usize,
    pub prototypes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid: 4,
            pool: 2,
            embed_dim: 32,
            depth: 2,
            mlp_hidden: 64,
            head_hidden: 64,
            bottleneck: 32,
            prototypes: 64,
        }
    }
}

impl ModelConfig {
    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn token_dim(&self) -> usize {
        3 * self.pool * self.pool
    }
}

/// Which network a forward pass runs on. Only the student accepts a mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    Student,
    Teacher,
}

/// Trainable tensors registered on a tape, by parameter name.
pub type Vars<'t> = BTreeMap<String, Var<'t>>;

pub fn register_params<'t>(tape: &'t Tape, params: &ParamSet, trainable: bool) -> Vars<'t> {
    params
        .iter()
        .map(|(k, v)| {
            let var = if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) };
            (k.clone(), var)
        })
        .collect()
}

fn get<'t>(vars: &Vars<'t>, name: &str) -> Result<Var<'t>, SslError> {
    vars.get(name).copied().ok_or_else(|| SslError::MissingParam(name.to_string()))
}

/// Token inputs `[grid^2, 3 pool^2]` for an image.
pub fn image_tokens(img: &RgbImage, cfg: &ModelConfig) -> Result<Tensor, SslError> {
    let cells = cfg.grid * cfg.pool;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w < cells || h < cells {
        return Err(SslError::ViewTooSmall { width: img.width(), height: img.height(), cells });
    }
    let bounds =
        |n: usize| -> Vec<(usize, usize)> { (0..cells).map(|i| (i * n / cells, (i + 1) * n / cells)).collect() };
    let (xs, ys) = (bounds(w), bounds(h));
    let mut data = Vec::with_capacity(cfg.tokens() * cfg.token_dim());
    for gy in 0..cfg.grid {
        for gx in 0..cfg.grid {
            for py in 0..cfg.pool {
                for px in 0..cfg.pool {
                    let (x0, x1) = xs[gx * cfg.pool + px];
                    let (y0, y1) = ys[gy * cfg.pool + py];
                    let mut acc = [0u64; 3];
                    for y in y0..y1 {
                        let row = &img.data()[(y * w + x0) * 3..(y * w + x1) * 3];
                        for p in row.chunks_exact(3) {
                            for c in 0..3 {
                                acc[c] += p[c] as u64;
                            }
                        }
                    }
                    let n = ((x1 - x0) * (y1 - y0)) as f64 * 255.0;
                    data.extend(acc.iter().map(|&a| a as f64 / n));
                }
            }
        }
    }
    Ok(Tensor::new(vec![cfg.tokens(), cfg.token_dim()], data)?)
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("sized")
}

fn head_params(p: &mut ParamSet, prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) {
    p.insert(format!("{prefix}.w1"), xavier(rng, cfg.embed_dim, cfg.head_hidden));
    p.insert(format!("{prefix}.b1"), Tensor::zeros(&[1, cfg.head_hidden]));
    p.insert(format!("{prefix}.w2"), xavier(rng, cfg.head_hidden, cfg.bottleneck));
    p.insert(format!("{prefix}.b2"), Tensor::zeros(&[1, cfg.bottleneck]));
    p.insert(format!("{prefix}.prototypes"), xavier(rng, cfg.prototypes, cfg.bottleneck));
}

/// Seeded initial parameters for encoder and both heads.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    let (t, d) = (cfg.tokens(), cfg.embed_dim);
    p.insert("encoder.embed.w".into(), xavier(&mut rng, cfg.token_dim(), d));
    p.insert("encoder.embed.b".into(), Tensor::zeros(&[1, d]));
    p.insert("encoder.mask_token".into(), Tensor::zeros(&[1, d]));
    for i in 0..cfg.depth {
        p.insert(format!("encoder.blocks.{i}.mix"), xavier(&mut rng, t, t).scale(0.5));
        p.insert(format!("encoder.blocks.{i}.w1"), xavier(&mut rng, d, cfg.mlp_hidden));
        p.insert(format!("encoder.blocks.{i}.b1"), Tensor::zeros(&[1, cfg.mlp_hidden]));
        p.insert(format!("encoder.blocks.{i}.w2"), xavier(&mut rng, cfg.mlp_hidden, d).scale(0.5));
        p.insert(format!("encoder.blocks.{i}.b2"), Tensor::zeros(&[1, d]));
    }
    head_params(&mut p, "dino_head", cfg, &mut rng);
    head_params(&mut p, "ibot_head", cfg, &mut rng);
    p
}

/// Encoder output: per-token features `[T, D]` and the global feature `[1, D]`.
pub struct Encoded<'t> {
    pub tokens: Var<'t>,
    pub global: Var<'t>,
}

pub fn encode<'t>(
    tape: &'t Tape,
    vars: &Vars<'t>,
    cfg: &ModelConfig,
    tokens: Tensor,
    mask: Option<&[bool]>,
    path: Path,
) -> Result<Encoded<'t>, SslError> {
    if mask.is_some() && path == Path::Teacher {
        return Err(SslError::TeacherMask);
    }
    let t = cfg.tokens();
    let x = tape.constant(tokens);
    let mut h = x.matmul(&get(vars, "encoder.embed.w")?)?.add_row(&get(vars, "encoder.embed.b")?)?;
    if let Some(mask) = mask {
        if mask.len() != t {
            return Err(SslError::MaskLength { mask: mask.len(), tokens: t });
        }
        let d = cfg.embed_dim;
        let keep: Vec<f64> = mask.iter().flat_map(|&m| std::iter::repeat_n(if m { 0.0 } else { 1.0 }, d)).collect();
        let hit: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let keep = tape.constant(Tensor::new(vec![t, d], keep)?);
        let hit = tape.constant(Tensor::new(vec![t, 1], hit)?);
        h = h.mul(&keep)?.add(&hit.matmul(&get(vars, "encoder.mask_token")?)?)?;
    }
    for i in 0..cfg.depth {
        let mix = get(vars, &format!("encoder.blocks.{i}.mix"))?;
        h = h.add(&mix.matmul(&h.layer_norm(LN_EPS))?)?;
        let m = h
            .layer_norm(LN_EPS)
            .matmul(&get(vars, &format!("encoder.blocks.{i}.w1"))?)?
            .add_row(&get(vars, &format!("encoder.blocks.{i}.b1"))?)?
            .gelu()
            .matmul(&get(vars, &format!("encoder.blocks.{i}.w2"))?)?
            .add_row(&get(vars, &format!("encoder.blocks.{i}.b2"))?)?;
        h = h.add(&m)?;
    }
    if cfg.depth > 0 {
        h = h.layer_norm(LN_EPS);
    }
    let global = h.mean_rows().l2_normalize();
    Ok(Encoded { tokens: h, global })
}

/// Projection head `prefix` on rows of `x`: two-layer MLP, l2 normalization,
/// then cosine logits against l2-normalized prototypes. Output `[n, K]`.
pub fn head<'t>(vars: &Vars<'t>, prefix: &str, x: Var<'t>) -> Result<Var<'t>, SslError> {
    let h = x
        .matmul(&get(vars, &format!("{prefix}.w1"))?)?
        .add_row(&get(vars, &format!("{prefix}.b1"))?)?
        .gelu()
        .matmul(&get(vars, &format!("{prefix}.w2"))?)?
        .add_row(&get(vars, &format!("{prefix}.b2"))?)?
        .l2_normalize();
    let protos = get(vars, &format!("{prefix}.prototypes"))?.l2_normalize();
    Ok(h.matmul(&protos.transpose())?)
}

/// Teacher global feature for one image, without a gradient tape kept.
pub fn teacher_feature(params: &ParamSet, cfg: &ModelConfig, img: &RgbImage) -> Result<Vec<f64>, SslError> {
    let tape = Tape::new();
    let vars = register_params(&tape, params, false);
    let enc = encode(&tape, &vars, cfg, image_tokens(img, cfg)?, None, Path::Teacher)?;
    Ok(enc.global.value().data().to_vec())
}
