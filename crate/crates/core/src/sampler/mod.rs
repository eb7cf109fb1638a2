//! Euler integration of the policy's velocity field with optional
//! contrastive prompt guidance, and closed-loop rollouts.

mod rollout;

pub use rollout::{rollout, ChunkPolicy, ExpertPolicy, PlannedChunk, SnapshotPolicy, Trajectory, TrajectoryStep};

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ActionChunk, Conditioned, Prompt};
use crate::rng::{normal_vec, rng_from_seed};

/// A velocity field over flattened action chunks, conditioned on a prompt.
pub trait VelocityField {
    fn chunk_width(&self) -> usize;
    fn horizon(&self) -> usize;
    fn velocity(&self, prompt: &Prompt, chunk: &[f64], t: f64) -> Result<Vec<f64>>;
}

impl VelocityField for Conditioned<'_> {
    fn chunk_width(&self) -> usize {
        self.snapshot.config.chunk_width()
    }

    fn horizon(&self) -> usize {
        self.snapshot.config.horizon
    }

    fn velocity(&self, prompt: &Prompt, chunk: &[f64], t: f64) -> Result<Vec<f64>> {
        Conditioned::velocity(self, prompt, chunk, t)
    }
}

/// Wraps a field and counts velocity evaluations.
pub struct CountingField<F> {
    pub inner: F,
    count: AtomicUsize,
}

impl<F> CountingField<F> {
    pub fn new(inner: F) -> Self {
        CountingField {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl<F: VelocityField> VelocityField for CountingField<F> {
    fn chunk_width(&self) -> usize {
        self.inner.chunk_width()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn velocity(&self, prompt: &Prompt, chunk: &[f64], t: f64) -> Result<Vec<f64>> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.velocity(prompt, chunk, t)
    }
}

/// Sampler settings that do not depend on the trial's prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceSettings {
    /// Guidance scale; 1 recovers plain conditioning.
    pub w: f64,
    pub num_steps: usize,
    pub cpg_enabled: bool,
    /// Negative prompt; defaults to the task's training prompt.
    pub negative_override: Option<Prompt>,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        GuidanceSettings {
            w: 3.0,
            num_steps: 10,
            cpg_enabled: true,
            negative_override: None,
        }
    }
}

impl GuidanceSettings {
    pub fn plain() -> Self {
        GuidanceSettings {
            cpg_enabled: false,
            ..Self::default()
        }
    }

    /// Maps every setting that samples like plain conditioning (CPG off,
    /// or `w = 1`) onto one representative, so equivalent runs share
    /// digests and file names.
    pub fn canonical(&self) -> Self {
        if !self.cpg_enabled || self.w == 1.0 {
            GuidanceSettings {
                w: 1.0,
                num_steps: self.num_steps,
                cpg_enabled: false,
                negative_override: None,
            }
        } else {
            *self
        }
    }

    pub fn resolve(&self, positive: Prompt, trained: Prompt) -> GuidanceConfig {
        GuidanceConfig {
            w: self.w,
            num_steps: self.num_steps,
            positive,
            negative: self.negative_override.unwrap_or(trained),
            cpg_enabled: self.cpg_enabled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub w: f64,
    pub num_steps: usize,
    pub positive: Prompt,
    pub negative: Prompt,
    pub cpg_enabled: bool,
}

impl GuidanceConfig {
    pub fn plain(positive: Prompt, num_steps: usize) -> Self {
        GuidanceConfig {
            w: 1.0,
            num_steps,
            positive,
            negative: positive,
            cpg_enabled: false,
        }
    }

    /// Euler step size, `-1 / num_steps`.
    pub fn delta(&self) -> f64 {
        -1.0 / self.num_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::Config("num_steps must be positive".into()));
        }
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return Err(Error::Config(format!("guidance scale must be finite and non-negative, got {}", self.w)));
        }
        self.positive.validate()?;
        self.negative.validate()
    }
}

/// `v_neg + w * (v_pos - v_neg)`. Returns `v_pos` bitwise for `w = 1`,
/// `v_neg` bitwise for `w = 0`, and the common value wherever the two agree.
pub fn guided_field(v_pos: &[f64], v_neg: &[f64], w: f64) -> Result<Vec<f64>> {
    if v_pos.len() != v_neg.len() {
        return Err(Error::Shape(format!(
            "positive field has {} values, negative {}",
            v_pos.len(),
            v_neg.len()
        )));
    }
    if w == 1.0 {
        return Ok(v_pos.to_vec());
    }
    if w == 0.0 {
        return Ok(v_neg.to_vec());
    }
    Ok(v_pos
        .iter()
        .zip(v_neg)
        .map(|(&p, &n)| if p == n { p } else { n + w * (p - n) })
        .collect())
}

/// Raw fields seen at one Euler step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub t: f64,
    pub positive: Vec<f64>,
    pub negative: Option<Vec<f64>>,
}

/// Integrates from seeded standard-normal noise at `t = 1` to `t = 0`.
pub fn denoise<F: VelocityField + ?Sized>(field: &F, cfg: &GuidanceConfig, noise_seed: u64) -> Result<ActionChunk> {
    denoise_inner(field, cfg, noise_seed, None)
}

/// As [`denoise`], also returning the raw fields of every step.
pub fn denoise_traced<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &GuidanceConfig,
    noise_seed: u64,
) -> Result<(ActionChunk, Vec<FieldRecord>)> {
    let mut records = Vec::with_capacity(cfg.num_steps);
    let chunk = denoise_inner(field, cfg, noise_seed, Some(&mut records))?;
    Ok((chunk, records))
}

/// Standard-normal starting point for `noise_seed`.
pub fn initial_noise(width: usize, noise_seed: u64) -> Vec<f64> {
    normal_vec(&mut rng_from_seed(noise_seed), width)
}

fn denoise_inner<F: VelocityField + ?Sized>(
    field: &F,
    cfg: &GuidanceConfig,
    noise_seed: u64,
    mut records: Option<&mut Vec<FieldRecord>>,
) -> Result<ActionChunk> {
    cfg.validate()?;
    let mut a = initial_noise(field.chunk_width(), noise_seed);
    let delta = cfg.delta();
    let n = cfg.num_steps;
    for k in 0..n {
        let t = 1.0 - k as f64 / n as f64;
        let v_pos = field.velocity(&cfg.positive, &a, t)?;
        let (v, v_neg) = if cfg.cpg_enabled {
            let v_neg = field.velocity(&cfg.negative, &a, t)?;
            (guided_field(&v_pos, &v_neg, cfg.w)?, Some(v_neg))
        } else {
            (v_pos.clone(), None)
        };
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite velocity at t = {t}, index {i}")));
        }
        a.iter_mut().zip(&v).for_each(|(a, v)| *a += delta * v);
        if let Some(r) = records.as_deref_mut() {
            r.push(FieldRecord {
                t,
                positive: v_pos,
                negative: v_neg,
            });
        }
    }
    ActionChunk::from_flat(field.horizon(), a)
}
