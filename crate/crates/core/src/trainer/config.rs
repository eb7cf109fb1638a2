//! Training configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamWConfig;

/// Post-training variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Encoder trained under the drift penalty, backbone and expert through adapters.
    Delock,
    /// As `Delock` without the penalty.
    NoVisReg,
    /// Encoder frozen, backbone and expert through adapters.
    FrozenVis,
    /// Every block trainable, no adapters, no penalty.
    FullFt,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Delock => "delock",
            TrainMode::NoVisReg => "no_vis_reg",
            TrainMode::FrozenVis => "frozen_vis",
            TrainMode::FullFt => "full_ft",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [TrainMode::Delock, TrainMode::NoVisReg, TrainMode::FrozenVis, TrainMode::FullFt]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown training mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub rank: usize,
    pub alpha: f64,
}

/// Low-rank adapters per component. `None` trains that component's base
/// weights directly. Ignored in `full_ft`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub backbone: Option<AdapterSpec>,
    pub expert: Option<AdapterSpec>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            backbone: Some(AdapterSpec { rank: 8, alpha: 8.0 }),
            expert: Some(AdapterSpec { rank: 16, alpha: 16.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    /// Log row interval; 0 logs only the first and last step.
    pub log_every: u64,
    /// Checkpoint hook interval; 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        let mut optimizer = AdamWConfig::default();
        optimizer.schedule.final_lr = 1e-5;
        optimizer.schedule.decay_steps = 30_000;
        PretrainConfig {
            steps: 30_000,
            batch_size: 32,
            optimizer,
            seed: 0,
            log_every: 500,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Drift penalty weight on the encoder.
    pub lambda: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub adapters: AdapterConfig,
    pub seed: u64,
    pub log_every: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Delock,
            lambda: DEFAULT_LAMBDA,
            steps: 10_000,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            adapters: AdapterConfig::default(),
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

/// Drift penalty weight picked by the calibration sweep (see the
/// `calibrate` example).
pub const DEFAULT_LAMBDA: f64 = 0.1;

impl TrainConfig {
    pub fn for_mode(mode: TrainMode, seed: u64) -> Self {
        let lambda = if mode == TrainMode::Delock { DEFAULT_LAMBDA } else { 0.0 };
        TrainConfig {
            mode,
            lambda,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        match self.mode {
            TrainMode::Delock if self.lambda == 0.0 => {
                return Err(Error::Config("delock requires lambda > 0".into()));
            }
            TrainMode::NoVisReg | TrainMode::FrozenVis | TrainMode::FullFt if self.lambda != 0.0 => {
                return Err(Error::Config(format!("{} requires lambda = 0, got {}", self.mode.as_str(), self.lambda)));
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for spec in [self.adapters.backbone, self.adapters.expert].into_iter().flatten() {
            if spec.rank == 0 {
                return Err(Error::Config("adapter rank must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_lambda_invariants() {
        let mut c = TrainConfig::for_mode(TrainMode::Delock, 0);
        assert!(c.validate().is_ok());
        c.lambda = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainConfig::for_mode(TrainMode::NoVisReg, 0);
        assert!(c.validate().is_ok());
        c.lambda = 0.1;
        assert!(c.validate().is_err());
        c.lambda = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [TrainMode::Delock, TrainMode::NoVisReg, TrainMode::FrozenVis, TrainMode::FullFt] {
            assert_eq!(TrainMode::parse(m.as_str()).unwrap(), m);
        }
        assert!(TrainMode::parse("lora").is_err());
    }
}
