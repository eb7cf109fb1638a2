//! Method rows of the comparison matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::GuidanceSettings;
use crate::trainer::TrainMode;

/// One row of the comparison: a post-training variant plus its sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain fine-tuning through adapters, no penalty, no guidance.
    Sft,
    /// Full fine-tuning, then weight interpolation with the pretrained
    /// snapshot; plain sampling.
    Retain,
    /// Drift-regularized post-training with plain sampling.
    DelockNoCpg,
    /// Unregularized post-training with contrastive guidance.
    NoVisReg,
    /// Frozen encoder with contrastive guidance.
    FrozenVis,
    /// Drift-regularized post-training with contrastive guidance.
    Delock,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Sft,
        Method::Retain,
        Method::DelockNoCpg,
        Method::NoVisReg,
        Method::FrozenVis,
        Method::Delock,
    ];
    /// Rows of the default comparison table.
    pub const TABLE: [Method; 5] = [
        Method::Retain,
        Method::DelockNoCpg,
        Method::NoVisReg,
        Method::FrozenVis,
        Method::Delock,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::Retain => "retain",
            Method::DelockNoCpg => "delock_no_cpg",
            Method::NoVisReg => "no_vis_reg",
            Method::FrozenVis => "frozen_vis",
            Method::Delock => "delock",
        }
    }

    /// Row label for tables.
    pub fn label(&self) -> &'static str {
        match self {
            Method::Sft => "SFT",
            Method::Retain => "RETAIN",
            Method::DelockNoCpg => "DeLock w/o CPG",
            Method::NoVisReg => "w/o Vis-Reg",
            Method::FrozenVis => "w/ Frozen-Vis",
            Method::Delock => "DeLock",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }

    pub fn train_mode(&self) -> TrainMode {
        match self {
            Method::Sft | Method::NoVisReg => TrainMode::NoVisReg,
            Method::Retain => TrainMode::FullFt,
            Method::DelockNoCpg | Method::Delock => TrainMode::Delock,
            Method::FrozenVis => TrainMode::FrozenVis,
        }
    }

    pub fn regularized(&self) -> bool {
        self.train_mode() == TrainMode::Delock
    }

    pub fn uses_cpg(&self) -> bool {
        matches!(self, Method::NoVisReg | Method::FrozenVis | Method::Delock)
    }

    /// The sampler this row runs with, given the experiment's guidance.
    pub fn guidance(&self, base: &GuidanceSettings) -> GuidanceSettings {
        let g = if self.uses_cpg() {
            *base
        } else {
            GuidanceSettings {
                num_steps: base.num_steps,
                ..GuidanceSettings::plain()
            }
        };
        g.canonical()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.as_str()).unwrap(), m);
        }
        assert!(Method::parse("lora").is_err());
    }

    #[test]
    fn cpg_rows_at_unit_scale_match_their_plain_twins() {
        let base = GuidanceSettings { w: 1.0, ..GuidanceSettings::default() };
        assert_eq!(Method::Delock.guidance(&base), Method::DelockNoCpg.guidance(&base));
        assert_eq!(Method::Delock.train_mode(), Method::DelockNoCpg.train_mode());
        let base = GuidanceSettings::default();
        assert_ne!(Method::Delock.guidance(&base), Method::DelockNoCpg.guidance(&base));
    }
}
