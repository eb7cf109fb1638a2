//! Policy parameters partitioned into encoder, prompt-conditioned backbone
//! and action expert, plus the frozen reference copy of the encoder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::action::{ActionChunk, ACTION_DIM};
use super::obs::{Observation, OBS_WIDTH};
use super::prompt::{Prompt, CONCEPTS, SPATIALS, VERBS};
use crate::error::{Error, Result};
use crate::nn::{Activation, Checkpoint, CheckpointMeta, Dense, LowRankAdapter, Mlp, MlpSpec, ParamBlock};
use crate::rng::{rng_from_seed, standard_normal, Rng};

pub const TIME_FEATURES: usize = 7;

/// Sinusoidal features of flow time.
pub fn time_features(t: f64) -> [f64; TIME_FEATURES] {
    use std::f64::consts::PI;
    [
        t,
        (PI * t).sin(),
        (PI * t).cos(),
        (2.0 * PI * t).sin(),
        (2.0 * PI * t).cos(),
        (4.0 * PI * t).sin(),
        (4.0 * PI * t).cos(),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub horizon: usize,
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub backbone_hidden: Vec<usize>,
    pub cond_dim: usize,
    pub expert_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            horizon: super::action::DEFAULT_HORIZON,
            embed_dim: 16,
            encoder_hidden: vec![64],
            feature_dim: 64,
            backbone_hidden: vec![128],
            cond_dim: 128,
            expert_hidden: vec![128, 128],
            activation: Activation::Tanh,
        }
    }
}

impl PolicyConfig {
    pub fn chunk_width(&self) -> usize {
        self.horizon * ACTION_DIM
    }

    fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
        std::iter::once(input).chain(hidden.iter().copied()).chain(std::iter::once(output)).collect()
    }

    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(Self::widths(OBS_WIDTH, &self.encoder_hidden, self.feature_dim), self.activation)
    }

    pub fn backbone_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(
            Self::widths(3 * self.embed_dim + self.feature_dim, &self.backbone_hidden, self.cond_dim),
            self.activation,
        )
    }

    pub fn expert_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(
            Self::widths(self.cond_dim + self.chunk_width() + TIME_FEATURES, &self.expert_hidden, self.chunk_width()),
            self.activation,
        )
    }
}

/// Provenance tag carried by a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotMode {
    Init,
    Pretrained,
    Delock,
    NoVisReg,
    FrozenVis,
    FullFt,
    Retain,
}

impl SnapshotMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SnapshotMode::Init => "init",
            SnapshotMode::Pretrained => "pretrained",
            SnapshotMode::Delock => "delock",
            SnapshotMode::NoVisReg => "no_vis_reg",
            SnapshotMode::FrozenVis => "frozen_vis",
            SnapshotMode::FullFt => "full_ft",
            SnapshotMode::Retain => "retain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Format(format!("unknown snapshot mode `{s}`")))
    }
}

/// Token embedding tables for the verb, concept and spatial slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub verb: ParamBlock,
    pub concept: ParamBlock,
    pub spatial: ParamBlock,
}

impl Embeddings {
    fn new(dim: usize, rng: &mut Rng) -> Self {
        let mut table = |name: &str, rows: usize| {
            let mut b = ParamBlock::zeros(format!("embed.{name}"), &[rows, dim]);
            b.values.iter_mut().for_each(|v| *v = standard_normal(rng));
            b
        };
        Embeddings {
            verb: table("verb", VERBS.len()),
            concept: table("concept", CONCEPTS.len()),
            spatial: table("spatial", SPATIALS.len()),
        }
    }

    pub fn blocks(&self) -> [&ParamBlock; 3] {
        [&self.verb, &self.concept, &self.spatial]
    }

    pub fn blocks_mut(&mut self) -> [&mut ParamBlock; 3] {
        [&mut self.verb, &mut self.concept, &mut self.spatial]
    }

    fn dim(&self) -> usize {
        self.verb.shape[1]
    }

    fn row(table: &ParamBlock, id: u16) -> &[f64] {
        let d = table.shape[1];
        &table.values[id as usize * d..(id as usize + 1) * d]
    }

    /// The only place a prompt enters the network.
    pub fn lookup(&self, prompt: &Prompt, out: &mut Vec<f64>) {
        out.extend_from_slice(Self::row(&self.verb, prompt.verb));
        out.extend_from_slice(Self::row(&self.concept, prompt.concept));
        out.extend_from_slice(Self::row(&self.spatial, prompt.spatial));
    }

    /// Scatters `grad` (width `3 * dim`) into the rows selected by `prompt`.
    pub fn accumulate(&mut self, prompt: &Prompt, grad: &[f64]) {
        let d = self.dim();
        let ids = [prompt.verb, prompt.concept, prompt.spatial];
        for ((table, id), g) in self.blocks_mut().into_iter().zip(ids).zip(grad.chunks_exact(d)) {
            if table.trainable {
                let row = &mut table.grad[id as usize * d..(id as usize + 1) * d];
                row.iter_mut().zip(g).for_each(|(r, g)| *r += g);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub config: PolicyConfig,
    /// Visual encoder parameters.
    pub encoder: Mlp,
    pub embeddings: Embeddings,
    pub backbone: Mlp,
    /// Action expert parameters.
    pub expert: Mlp,
    /// Frozen reference copy of the encoder, set at the end of pretraining.
    pub encoder_pre: Option<Vec<ParamBlock>>,
    pub mode: SnapshotMode,
}

impl PolicySnapshot {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let encoder = Mlp::new("encoder", config.encoder_spec()?, &mut rng);
        let embeddings = Embeddings::new(config.embed_dim, &mut rng);
        let backbone = Mlp::new("backbone", config.backbone_spec()?, &mut rng);
        let expert = Mlp::new("expert", config.expert_spec()?, &mut rng);
        Ok(PolicySnapshot {
            config,
            encoder,
            embeddings,
            backbone,
            expert,
            encoder_pre: None,
            mode: SnapshotMode::Init,
        })
    }

    pub fn encoder_blocks(&self) -> Vec<&ParamBlock> {
        self.encoder.blocks()
    }

    /// Copies the current encoder into `encoder_pre`.
    pub fn freeze_encoder_reference(&mut self) {
        self.encoder_pre = Some(self.encoder.blocks().into_iter().cloned().collect());
    }

    /// Every block in a fixed order: encoder, embeddings, backbone, expert.
    pub fn blocks(&self) -> Vec<&ParamBlock> {
        let mut out = self.encoder.blocks();
        out.extend(self.embeddings.blocks());
        out.extend(self.backbone.blocks());
        out.extend(self.expert.blocks());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut out = self.encoder.blocks_mut();
        out.extend(self.embeddings.blocks_mut());
        out.extend(self.backbone.blocks_mut());
        out.extend(self.expert.blocks_mut());
        out
    }

    pub fn zero_grads(&mut self) {
        self.blocks_mut().into_iter().for_each(ParamBlock::zero_grad);
    }

    pub fn encode_obs(&self, o: &Observation) -> Result<Vec<f64>> {
        o.validate()?;
        self.encoder.forward(&o.features(), 1)
    }

    /// Backbone input: the three token embeddings followed by encoder features.
    pub fn backbone_input(&self, prompt: &Prompt, features: &[f64]) -> Result<Vec<f64>> {
        prompt.validate()?;
        let mut x = Vec::with_capacity(3 * self.config.embed_dim + features.len());
        self.embeddings.lookup(prompt, &mut x);
        x.extend_from_slice(features);
        Ok(x)
    }

    pub fn backbone_output(&self, prompt: &Prompt, features: &[f64]) -> Result<Vec<f64>> {
        self.backbone.forward(&self.backbone_input(prompt, features)?, 1)
    }

    pub fn expert_input(cond: &[f64], chunk: &[f64], t: f64, out: &mut Vec<f64>) {
        out.extend_from_slice(cond);
        out.extend_from_slice(chunk);
        out.extend(time_features(t));
    }

    pub fn velocity_from_cond(&self, cond: &[f64], chunk: &[f64], t: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Validation(format!("flow time {t} outside [0, 1]")));
        }
        if chunk.len() != self.config.chunk_width() {
            return Err(Error::Shape(format!(
                "chunk of {} values, expected {}",
                chunk.len(),
                self.config.chunk_width()
            )));
        }
        let mut x = Vec::with_capacity(self.expert.spec().input_width());
        Self::expert_input(cond, chunk, t, &mut x);
        self.expert.forward(&x, 1)
    }

    pub fn predict_velocity(&self, o: &Observation, prompt: &Prompt, chunk: &ActionChunk, t: f64) -> Result<Vec<f64>> {
        let features = self.encode_obs(o)?;
        let cond = self.backbone_output(prompt, &features)?;
        self.velocity_from_cond(&cond, &chunk.actions, t)
    }

    /// Encodes `o` once so that many velocity queries can share it.
    pub fn conditioned<'a>(&'a self, o: &Observation) -> Result<Conditioned<'a>> {
        Ok(Conditioned {
            snapshot: self,
            features: self.encode_obs(o)?,
            cache: std::sync::Mutex::new(Vec::new()),
        })
    }

    /// Builds a snapshot from a checkpoint written by [`PolicySnapshot::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: PolicyConfig = serde_json::from_str(
            ck.meta
                .extra
                .get("policy_config")
                .ok_or_else(|| Error::Format("checkpoint lacks policy_config".into()))?,
        )
        .map_err(|e| Error::Format(e.to_string()))?;
        let mode = SnapshotMode::parse(&ck.meta.mode)?;
        let mlp = |prefix: &str, spec: MlpSpec| -> Result<Mlp> {
            let layers = (0..spec.num_layers())
                .map(|l| {
                    let base = format!("{prefix}.{l}");
                    let adapter = match ck.block(&format!("{base}.weight.lora_a")) {
                        Ok(a) => {
                            let b = ck.block(&format!("{base}.weight.lora_b"))?;
                            let alpha: f64 = ck
                                .meta
                                .extra
                                .get(&format!("{prefix}.lora_alpha"))
                                .and_then(|s| s.parse().ok())
                                .ok_or_else(|| Error::Format(format!("missing {prefix}.lora_alpha")))?;
                            Some(LowRankAdapter {
                                target: format!("{base}.weight"),
                                rank: a.shape[0],
                                alpha,
                                a: a.clone(),
                                b: b.clone(),
                            })
                        }
                        Err(_) => None,
                    };
                    Ok(Dense {
                        weight: ck.block(&format!("{base}.weight"))?.clone(),
                        bias: ck.block(&format!("{base}.bias"))?.clone(),
                        adapter,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Mlp::from_layers(spec, layers)
        };
        let encoder = mlp("encoder", config.encoder_spec()?)?;
        let backbone = mlp("backbone", config.backbone_spec()?)?;
        let expert = mlp("expert", config.expert_spec()?)?;
        let embeddings = Embeddings {
            verb: ck.block("embed.verb")?.clone(),
            concept: ck.block("embed.concept")?.clone(),
            spatial: ck.block("embed.spatial")?.clone(),
        };
        let pre: Vec<ParamBlock> = ck
            .blocks
            .iter()
            .filter_map(|b| {
                b.name.strip_prefix("encoder_pre/").map(|n| {
                    let mut c = b.clone();
                    c.name = n.to_string();
                    c
                })
            })
            .collect();
        Ok(PolicySnapshot {
            config,
            encoder,
            embeddings,
            backbone,
            expert,
            encoder_pre: (!pre.is_empty()).then_some(pre),
            mode,
        })
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64, mut extra: BTreeMap<String, String>) -> Result<Checkpoint> {
        extra.insert(
            "policy_config".into(),
            serde_json::to_string(&self.config).map_err(|e| Error::Format(e.to_string()))?,
        );
        extra.insert(
            "vocab".into(),
            serde_json::json!({ "verb": VERBS, "concept": CONCEPTS, "spatial": SPATIALS }).to_string(),
        );
        for (prefix, net) in [("backbone", &self.backbone), ("expert", &self.expert)] {
            if let Some(ad) = net.layers().iter().find_map(|l| l.adapter.as_ref()) {
                extra.insert(format!("{prefix}.lora_alpha"), format!("{:?}", ad.alpha));
            }
        }
        let mut blocks: Vec<ParamBlock> = self.blocks().into_iter().cloned().collect();
        if let Some(pre) = &self.encoder_pre {
            blocks.extend(pre.iter().map(|b| {
                let mut c = b.clone();
                c.name = format!("encoder_pre/{}", b.name);
                c
            }));
        }
        Ok(Checkpoint {
            meta: CheckpointMeta {
                seed,
                step,
                mode: self.mode.as_str().to_string(),
                extra,
            },
            blocks,
        })
    }
}

/// A snapshot bound to one observation, with per-prompt conditioning cached.
pub struct Conditioned<'a> {
    pub snapshot: &'a PolicySnapshot,
    pub features: Vec<f64>,
    cache: std::sync::Mutex<Vec<(Prompt, std::sync::Arc<Vec<f64>>)>>,
}

impl Conditioned<'_> {
    pub fn cond(&self, prompt: &Prompt) -> Result<std::sync::Arc<Vec<f64>>> {
        let mut cache = self.cache.lock().expect("conditioning cache poisoned");
        if let Some((_, c)) = cache.iter().find(|(p, _)| p == prompt) {
            return Ok(c.clone());
        }
        let c = std::sync::Arc::new(self.snapshot.backbone_output(prompt, &self.features)?);
        cache.push((*prompt, c.clone()));
        Ok(c)
    }

    pub fn velocity(&self, prompt: &Prompt, chunk: &[f64], t: f64) -> Result<Vec<f64>> {
        let cond = self.cond(prompt)?;
        self.snapshot.velocity_from_cond(&cond, chunk, t)
    }
}
