//! AdamW with decoupled weight decay, and global-norm gradient clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Moments {
    m: Tensor,
    v: Tensor,
    step: u64,
}

/// AdamW optimizer state, keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, state: BTreeMap::new() }
    }

    /// Updates every parameter that has an entry in `grads`; parameters
    /// without a gradient are left untouched along with their moments.
    ///
    /// Decay is applied as `p -= lr * wd * p` before the Adam step. No
    /// parameter changes if any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &ParamSet,
        lr: f64,
        weight_decay: f64,
    ) -> Result<(), TensorError> {
        for (name, g) in grads {
            let p = params.get(name).ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            p.expect_same_shape(g, "adamw")?;
            if !g.all_finite() {
                return Err(TensorError::NonFiniteGradient(name.clone()));
            }
        }
        let AdamWConfig { beta1, beta2, eps } = self.config;
        for (name, g) in grads {
            let p = params.get_mut(name).expect("checked above");
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
                step: 0,
            });
            st.step += 1;
            let bc1 = 1.0 - beta1.powf(st.step as f64);
            let bc2 = 1.0 - beta2.powf(st.step as f64);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (k, pk) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                *pk -= lr * weight_decay * *pk;
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *pk -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// First and second moments and step count for one parameter.
    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor, u64)> {
        self.state.get(name).map(|s| (&s.m, &s.v, s.step))
    }

    /// Restores moments for one parameter, e.g. from a checkpoint.
    pub fn set_moments(&mut self, name: &str, m: Tensor, v: Tensor, step: u64) {
        self.state.insert(name.to_string(), Moments { m, v, step });
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.state.keys()
    }
}

/// Scales all gradients jointly so their global l2 norm is at most
/// `max_norm`. Returns the norm before clipping. A norm equal to `max_norm`
/// is left unchanged.
pub fn clip_global_norm<'a>(grads: impl IntoIterator<Item = &'a mut Tensor>, max_norm: f64) -> f64 {
    let grads: Vec<&mut Tensor> = grads.into_iter().collect();
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
