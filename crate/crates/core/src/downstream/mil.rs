//! Attention-based multiple-instance learning over bags of patch features.
//!
//! `a_k = softmax_k(w^T tanh(V h_k))`, `z = sum_k a_k h_k`, then a linear
//! classifier on `z`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_labels, to_matrix, DownstreamError};
use crate::numeric::{AdamW, AdamWConfig, ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: String,
    pub instances: Vec<Vec<f64>>,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbmilConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for AbmilConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 50, lr: 2e-5, batch: 1, weight_decay: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abmil {
    /// `attn.v [d, h]`, `attn.w [h, 1]`, `cls.w [d, C]`, `cls.b [1, C]`.
    pub params: ParamSet,
    pub classes: usize,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data).expect("sized")
}

impl Abmil {
    /// Seeded Xavier attention weights and a zero classifier.
    pub fn init(dim: usize, classes: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xav = |a: usize, b: usize| (6.0 / (a + b) as f64).sqrt();
        let mut params = ParamSet::new();
        params.insert("attn.v".into(), uniform(&mut rng, dim, hidden, xav(dim, hidden)));
        params.insert("attn.w".into(), uniform(&mut rng, hidden, 1, xav(hidden, 1)));
        params.insert("cls.w".into(), Tensor::zeros(&[dim, classes]));
        params.insert("cls.b".into(), Tensor::zeros(&[1, classes]));
        Self { params, classes }
    }

    /// Attention weights `[1, n]` and logits `[1, C]` for one bag.
    pub fn forward<'t>(vars: &AbmilVars<'t>, bag: Var<'t>) -> Result<(Var<'t>, Var<'t>), DownstreamError> {
        let scores = bag.matmul(&vars.v)?.tanh().matmul(&vars.w)?;
        let attn = scores.transpose().softmax(1.0)?;
        let z = attn.matmul(&bag)?;
        let logits = z.matmul(&vars.cls_w)?.add_row(&vars.cls_b)?;
        Ok((attn, logits))
    }

    pub fn register<'t>(&self, tape: &'t Tape, trainable: bool) -> AbmilVars<'t> {
        let leaf = |k: &str| {
            let t = self.params[k].clone();
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        AbmilVars { v: leaf("attn.v"), w: leaf("attn.w"), cls_w: leaf("cls.w"), cls_b: leaf("cls.b") }
    }

    /// Attention weights and class probabilities for one bag.
    pub fn predict_bag(&self, instances: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), DownstreamError> {
        if instances.is_empty() {
            return Err(DownstreamError::EmptyBag);
        }
        let tape = Tape::new();
        let vars = self.register(&tape, false);
        let (attn, logits) = Self::forward(&vars, tape.constant(to_matrix(instances)?))?;
        let probs = logits.value().softmax_rows(1.0)?;
        Ok((attn.value().data().to_vec(), probs.data().to_vec()))
    }
}

pub struct AbmilVars<'t> {
    pub v: Var<'t>,
    pub w: Var<'t>,
    pub cls_w: Var<'t>,
    pub cls_b: Var<'t>,
}

/// Cross-entropy of one bag's logits against its label.
pub fn bag_loss<'t>(logits: Var<'t>, label: usize, classes: usize) -> Result<Var<'t>, DownstreamError> {
    let mut onehot = Tensor::zeros(&[1, classes]);
    onehot.data_mut()[label] = 1.0;
    let t = logits.tape().constant(onehot);
    Ok(logits.log_softmax(1.0)?.mul(&t)?.sum().scale(-1.0))
}

/// Trains with AdamW on minibatches of `cfg.batch` bags (mean loss). Bags are
/// sorted by id before the seeded per-epoch shuffle, so input order does not
/// matter.
pub fn train_abmil(bags: &[Bag], classes: usize, cfg: &AbmilConfig) -> Result<Abmil, DownstreamError> {
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    check_labels(&labels, classes, bags.len())?;
    if cfg.batch == 0 {
        return Err(DownstreamError::BadConfig("batch must be positive".into()));
    }
    let dim = bags[0].instances.first().map(Vec::len).ok_or(DownstreamError::EmptyBag)?;
    let mut sorted: Vec<&Bag> = bags.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mats: Vec<Tensor> = sorted
        .iter()
        .map(|b| {
            if b.instances.is_empty() {
                return Err(DownstreamError::EmptyBag);
            }
            let m = to_matrix(&b.instances)?;
            if m.dims2().1 != dim {
                return Err(DownstreamError::DimensionMismatch { expected: dim, got: m.dims2().1 });
            }
            Ok(m)
        })
        .collect::<Result<_, _>>()?;

    let mut model = Abmil::init(dim, classes, cfg.hidden, cfg.seed);
    let mut opt = AdamW::new(AdamWConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa11c_e5ed);
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let tape = Tape::new();
            let vars = model.register(&tape, true);
            let mut total: Option<Var<'_>> = None;
            for &i in chunk {
                let (_, logits) = Abmil::forward(&vars, tape.constant(mats[i].clone()))?;
                let l = bag_loss(logits, sorted[i].label, classes)?.scale(1.0 / chunk.len() as f64);
                total = Some(match total {
                    None => l,
                    Some(t) => t.add(&l)?,
                });
            }
            tape.backward(total.expect("non-empty chunk"))?;
            let grads: ParamSet =
                [("attn.v", vars.v), ("attn.w", vars.w), ("cls.w", vars.cls_w), ("cls.b", vars.cls_b)]
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape()))))
                    .collect();
            opt.step(&mut model.params, &grads, cfg.lr, cfg.weight_decay)?;
        }
    }
    Ok(model)
}
