//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::eval::Condition;
use super::methods::Method;
use crate::error::{Error, Result};
use crate::nn::{AdamWConfig, LrSchedule};
use crate::policy::PolicyConfig;
use crate::sampler::GuidanceSettings;
use crate::trainer::{AdapterConfig, PretrainConfig, TrainConfig, DEFAULT_LAMBDA};
use crate::world::{DemoSpec, TaskId};

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    GenData,
    Pretrain,
    Posttrain,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::GenData, Stage::Pretrain, Stage::Posttrain, Stage::Eval];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Broad pretraining episodes, spread over every prompt of every task.
    pub broad_episodes: usize,
    /// Narrow post-training episodes per task.
    pub narrow_per_task: usize,
    pub broad_seed: u64,
    pub narrow_seed: u64,
    /// Step between the start indices of consecutive training windows.
    pub window_stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            broad_episodes: 2000,
            narrow_per_task: 100,
            broad_seed: 0,
            narrow_seed: 1,
            window_stride: 1,
        }
    }
}

impl DataConfig {
    pub fn broad_spec(&self) -> DemoSpec {
        DemoSpec::broad(self.broad_episodes, self.broad_seed)
    }

    pub fn narrow_spec(&self) -> DemoSpec {
        DemoSpec::narrow(self.narrow_per_task, self.narrow_seed)
    }
}

/// Post-training settings shared by every method; mode and seed come from
/// the method row and the seed set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosttrainConfig {
    /// Drift penalty weight for the regularized rows.
    pub lambda: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub adapters: AdapterConfig,
    pub log_every: u64,
}

impl Default for PosttrainConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        PosttrainConfig {
            lambda: DEFAULT_LAMBDA,
            steps: t.steps,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            adapters: t.adapters,
            log_every: t.log_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stages: Vec<Stage>,
    /// Run directory; relative paths resolve against the working directory.
    pub out_dir: PathBuf,
    /// Post-training and evaluation seeds. Pretraining is shared.
    pub seeds: Vec<u64>,
    pub trials: usize,
    pub tasks: Vec<TaskId>,
    pub methods: Vec<Method>,
    pub conditions: Vec<Condition>,
    pub data: DataConfig,
    pub policy: PolicyConfig,
    pub pretrain: PretrainConfig,
    pub posttrain: PosttrainConfig,
    pub guidance: GuidanceSettings,
    /// Interpolation weight of the fine-tuned endpoint for the RETAIN row.
    pub retain_alpha: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            stages: Stage::ALL.to_vec(),
            out_dir: PathBuf::from("runs/default"),
            seeds: vec![0],
            trials: 20,
            tasks: TaskId::ALL.to_vec(),
            methods: Method::TABLE.to_vec(),
            conditions: Condition::MATRIX.to_vec(),
            data: DataConfig::default(),
            policy: PolicyConfig::default(),
            pretrain: PretrainConfig::default(),
            posttrain: PosttrainConfig::default(),
            guidance: GuidanceSettings::default(),
            retain_alpha: 0.5,
        }
    }
}

impl ExperimentConfig {
    /// Built-in presets: `default` (the full matrix) and `smoke` (small data
    /// and short training, for plumbing checks).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "smoke" => {
                let mut c = Self::default();
                c.out_dir = PathBuf::from("runs/smoke");
                c.trials = 4;
                c.data.broad_episodes = 60;
                c.data.narrow_per_task = 4;
                c.data.window_stride = 5;
                c.policy.encoder_hidden = vec![16];
                c.policy.feature_dim = 16;
                c.policy.backbone_hidden = vec![16];
                c.policy.cond_dim = 16;
                c.policy.expert_hidden = vec![32];
                c.pretrain.steps = 200;
                c.pretrain.log_every = 50;
                c.pretrain.optimizer.schedule = LrSchedule::constant(1e-3);
                c.posttrain.steps = 100;
                c.posttrain.log_every = 50;
                Ok(c)
            }
            other => Err(Error::Config(format!("unknown preset `{other}` (expected default or smoke)"))),
        }
    }

    /// Loads `arg` as a preset name when it names one, else as a TOML file.
    pub fn resolve(arg: &str) -> Result<Self> {
        match arg {
            "default" | "smoke" => Self::preset(arg),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    /// Hex digest of everything that affects results. The output directory
    /// and the stage list are excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.stages.clear();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    /// Digest of the settings that determine the pretrained snapshot.
    pub fn pretrain_digest(&self) -> String {
        let bytes = serde_json::to_vec(&(&self.data, &self.policy, &self.pretrain)).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn train_config(&self, method: Method, seed: u64) -> TrainConfig {
        let mode = method.train_mode();
        TrainConfig {
            mode,
            lambda: if method.regularized() { self.posttrain.lambda } else { 0.0 },
            steps: self.posttrain.steps,
            batch_size: self.posttrain.batch_size,
            optimizer: self.posttrain.optimizer,
            adapters: self.posttrain.adapters,
            seed,
            log_every: self.posttrain.log_every,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |n: usize, what: &str| {
            if n == 0 {
                Err(Error::Config(format!("{what} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty(self.seeds.len(), "seeds")?;
        nonempty(self.tasks.len(), "tasks")?;
        nonempty(self.methods.len(), "methods")?;
        nonempty(self.conditions.len(), "conditions")?;
        if self.data.window_stride == 0 {
            return Err(Error::Config("data.window_stride must be positive".into()));
        }
        if self.data.broad_episodes == 0 || self.data.narrow_per_task == 0 {
            return Err(Error::Config("data episode counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.retain_alpha) {
            return Err(Error::Config(format!("retain_alpha {} outside [0, 1]", self.retain_alpha)));
        }
        if !(self.guidance.w.is_finite() && self.guidance.w >= 0.0) {
            return Err(Error::Config(format!("guidance.w must be finite and non-negative, got {}", self.guidance.w)));
        }
        if self.guidance.num_steps == 0 {
            return Err(Error::Config("guidance.num_steps must be positive".into()));
        }
        if self.pretrain.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be positive".into()));
        }
        self.policy.encoder_spec()?;
        self.policy.backbone_spec()?;
        self.policy.expert_spec()?;
        for &m in &self.methods {
            self.train_config(m, 0).validate()?;
        }
        Ok(())
    }
}
