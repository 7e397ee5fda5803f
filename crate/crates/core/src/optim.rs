//! AdamW with decoupled weight decay, and the cosine-with-warmup schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Gradients, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    /// Skip decay on parameters flagged `decay_exempt` (norm scales, biases).
    pub exempt_norms_and_biases: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 0.01,
            exempt_norms_and_biases: true,
        }
    }
}

/// First/second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub step: u64,
    pub moments: Vec<(ParamId, Tensor, Tensor)>,
}

impl AdamWState {
    /// Zero moments for every trainable parameter in `store`.
    pub fn new(store: &ParamStore) -> Self {
        let moments = store
            .trainable_ids()
            .into_iter()
            .map(|id| {
                let shape = store.value(id).shape();
                (id, Tensor::zeros(shape), Tensor::zeros(shape))
            })
            .collect();
        AdamWState { step: 0, moments }
    }
}

/// Update of a single parameter slice. Exposed so the scalar reference
/// trace can be checked without building a store.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamWConfig,
    decay: bool,
) {
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let p = param[i];
        param[i] = p - lr * m_hat / (v_hat.sqrt() + cfg.eps) - lr * wd * p;
    }
}

/// One optimizer step over every parameter tracked in `state`. Parameters
/// with no gradient in `grads` are treated as having a zero gradient.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &Gradients,
    state: &mut AdamWState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if lr < 0.0 {
        return Err(Error::argument(format!("negative learning rate {lr}")));
    }
    for (id, g) in grads.params() {
        if g.shape() != store.value(id).shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter {} of shape {:?}",
                g.shape(),
                store.get(id).name,
                store.value(id).shape()
            )));
        }
    }
    state.step += 1;
    let step = state.step;
    for (id, m, v) in state.moments.iter_mut() {
        let decay = !(cfg.exempt_norms_and_biases && store.get(*id).decay_exempt);
        let zeros;
        let g = match grads.param(*id) {
            Some(g) => g.data(),
            None => {
                zeros = vec![0.0; m.len()];
                &zeros
            }
        };
        let p = store.value_mut(*id);
        adamw_update(p.data_mut(), g, m.data_mut(), v.data_mut(), step, lr, cfg, decay);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub total_steps: u64,
    pub warmup_ratio: f64,
    pub floor_lr: f64,
}

impl ScheduleConfig {
    pub fn new(peak_lr: f64, total_steps: u64, warmup_ratio: f64) -> Result<Self> {
        let cfg = ScheduleConfig {
            peak_lr,
            total_steps,
            warmup_ratio,
            floor_lr: 0.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::config(format!(
                "warmup ratio {} outside [0, 1)",
                self.warmup_ratio
            )));
        }
        if self.peak_lr < 0.0 || self.floor_lr < 0.0 {
            return Err(Error::config("learning rates must be nonnegative"));
        }
        Ok(())
    }

    /// Number of linear warmup steps, `round(warmup_ratio · total_steps)`.
    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_ratio * self.total_steps as f64).round() as u64
    }
}

/// Linear ramp from 0 to `peak_lr` over the warmup steps, then half-cosine
/// decay to `floor_lr` at `total_steps`.
pub fn lr_at(step: u64, cfg: &ScheduleConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::argument(format!(
            "step {step} beyond the schedule's {} steps",
            cfg.total_steps
        )));
    }
    let warmup = cfg.warmup_steps();
    if step < warmup {
        return Ok(cfg.peak_lr * step as f64 / warmup as f64);
    }
    let decay_steps = cfg.total_steps - warmup;
    if decay_steps == 0 {
        return Ok(cfg.peak_lr);
    }
    let progress = (step - warmup) as f64 / decay_steps as f64;
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(cfg.floor_lr + (cfg.peak_lr - cfg.floor_lr) * cosine)
}
