//! AdamW with global-norm clipping and a warmup-then-cosine learning rate.

use serde::{Deserialize, Serialize};

use super::param::ParamBlock;
use crate::error::{Error, Result};

/// Linear warmup from 0 to `peak_lr`, then cosine decay to `final_lr` over
/// `decay_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    pub final_lr: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            peak_lr: lr,
            warmup_steps: 0,
            decay_steps: 1,
            final_lr: lr,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let decay = self.decay_steps.max(1);
        let s = (step - self.warmup_steps).min(decay) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * s / decay as f64).cos());
        self.final_lr + (self.peak_lr - self.final_lr) * cos
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    /// Not reported for the reference setup; the common default.
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
            schedule: LrSchedule {
                peak_lr: 1e-3,
                warmup_steps: 300,
                decay_steps: 15_000,
                final_lr: 1e-3,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

/// Moment buffers and step counter for one parameter list.
#[derive(Debug, Clone, Default)]
pub struct OptimState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure(&mut self, params: &[&mut ParamBlock]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
            return Ok(());
        }
        if self.first.len() != params.len() || self.first.iter().zip(params).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::Shape("optimizer moments do not match the parameter list".into()));
        }
        Ok(())
    }

    /// One AdamW update over the trainable blocks of `params`.
    ///
    /// Gradients are clipped in place to `clip_norm` (global L2 norm over
    /// trainable blocks) before the moment update. Frozen blocks are not touched.
    pub fn adamw_step(&mut self, params: &mut [&mut ParamBlock], cfg: &AdamWConfig) -> Result<StepStats> {
        self.ensure(params)?;
        for p in params.iter().filter(|p| p.trainable) {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in `{}`[{i}] at step {}",
                    p.name, self.step
                )));
            }
        }
        let grad_norm = params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let mut clipped_norm = grad_norm;
        if grad_norm > cfg.clip_norm {
            let scale = cfg.clip_norm / grad_norm;
            for p in params.iter_mut().filter(|p| p.trainable) {
                p.grad.iter_mut().for_each(|g| *g *= scale);
            }
            clipped_norm = cfg.clip_norm;
        }

        let lr = cfg.schedule.lr(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            let ParamBlock { values, grad, .. } = &mut **p;
            for j in 0..values.len() {
                let g = grad[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + cfg.eps) + cfg.weight_decay * values[j];
                values[j] -= lr * update;
            }
        }
        Ok(StepStats {
            lr,
            grad_norm,
            clipped_norm,
        })
    }
}
