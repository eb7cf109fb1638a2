//! Pretraining, low-data post-training with an encoder drift penalty, and
//! weight-space interpolation.

mod config;

pub use config::{AdapterConfig, AdapterSpec, PretrainConfig, TrainConfig, TrainMode, DEFAULT_LAMBDA};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamWConfig, OptimState, ParamBlock};
use crate::policy::flow::{draw_noise, flow_loss_with_noise, FlowNoise};
use crate::policy::{FlowSample, PolicyConfig, PolicySnapshot, SnapshotMode};
use crate::rng::{derive_seed, rng_from_seed};

const BATCH_STREAM: u64 = 1;
const ADAPTER_STREAM: u64 = 2;

/// Squared L2 distance between the current encoder and its reference copy.
pub fn encoder_drift_sq(snapshot: &PolicySnapshot) -> Result<f64> {
    let pre = snapshot
        .encoder_pre
        .as_ref()
        .ok_or_else(|| Error::State("snapshot has no encoder reference".into()))?;
    let cur = snapshot.encoder.blocks();
    if cur.len() != pre.len() || cur.iter().zip(pre).any(|(a, b)| !a.same_layout(b)) {
        return Err(Error::Shape("encoder does not match its reference layout".into()));
    }
    Ok(cur
        .iter()
        .zip(pre)
        .flat_map(|(a, b)| a.values.iter().zip(&b.values))
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// `lambda * ||encoder - encoder_pre||^2`. Adds `2 * lambda * (encoder -
/// encoder_pre)` to the gradients of trainable encoder blocks; no other
/// block is touched.
pub fn drift_penalty(snapshot: &mut PolicySnapshot, lambda: f64) -> Result<f64> {
    let penalty = lambda * encoder_drift_sq(snapshot)?;
    if lambda == 0.0 {
        return Ok(penalty);
    }
    let pre = snapshot.encoder_pre.as_ref().expect("checked above");
    for (block, reference) in snapshot.encoder.blocks_mut().into_iter().zip(pre) {
        if !block.trainable {
            continue;
        }
        block.ensure_grad();
        let ParamBlock { values, grad, .. } = block;
        for ((g, v), r) in grad.iter_mut().zip(values.iter()).zip(&reference.values) {
            *g += 2.0 * lambda * (v - r);
        }
    }
    Ok(penalty)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub bc: f64,
    pub penalty: f64,
}

/// Behavior-cloning loss plus the drift penalty for fixed noise. With
/// `backprop` the full gradient is accumulated into trainable blocks.
pub fn delock_loss(
    snapshot: &mut PolicySnapshot,
    batch: &[FlowSample],
    noise: &[FlowNoise],
    lambda: f64,
    backprop: bool,
) -> Result<LossParts> {
    let bc = flow_loss_with_noise(snapshot, batch, noise, backprop)?.loss;
    let penalty = if lambda > 0.0 {
        if backprop {
            drift_penalty(snapshot, lambda)?
        } else {
            lambda * encoder_drift_sq(snapshot)?
        }
    } else {
        0.0
    };
    Ok(LossParts {
        total: bc + penalty,
        bc,
        penalty,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub loss: f64,
    pub bc_loss: f64,
    pub penalty: f64,
    /// L2 norm of the encoder's displacement from its reference; 0 when
    /// there is no reference yet.
    pub drift_norm: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl TrainLogRow {
    pub const HEADER: &'static str = "step\tloss\tbc_loss\tpenalty\tdrift_norm\tlr\tgrad_norm";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.8e}\t{:.8e}\t{:.8e}\t{:.8e}\t{:.6e}\t{:.6e}",
            self.step, self.loss, self.bc_loss, self.penalty, self.drift_norm, self.lr, self.grad_norm
        )
    }
}

pub fn log_to_tsv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from(TrainLogRow::HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_tsv());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub snapshot: PolicySnapshot,
    pub log: Vec<TrainLogRow>,
}

/// Called with `(step, snapshot)` at every checkpoint interval.
pub type CheckpointHook<'a> = dyn FnMut(u64, &PolicySnapshot) -> Result<()> + 'a;

struct LoopSettings<'a> {
    steps: u64,
    batch_size: usize,
    optimizer: &'a AdamWConfig,
    seed: u64,
    lambda: f64,
    log_every: u64,
    checkpoint_every: u64,
}

fn train_loop(
    snapshot: &mut PolicySnapshot,
    samples: &[FlowSample],
    s: &LoopSettings<'_>,
    hook: &mut CheckpointHook<'_>,
) -> Result<Vec<TrainLogRow>> {
    if samples.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let mut rng = rng_from_seed(derive_seed(s.seed, &[BATCH_STREAM]));
    let mut opt = OptimState::new();
    let mut log = Vec::new();
    let mut batch = Vec::with_capacity(s.batch_size);
    for step in 0..s.steps {
        batch.clear();
        for _ in 0..s.batch_size {
            batch.push(samples[rng.random_range(0..samples.len())].clone());
        }
        let noise = draw_noise(&batch, &mut rng);
        snapshot.zero_grads();
        let parts = delock_loss(snapshot, &batch, &noise, s.lambda, true).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
            other => other,
        })?;
        let stats = opt.adamw_step(&mut snapshot.blocks_mut(), s.optimizer)?;
        let last = step + 1 == s.steps;
        if step == 0 || last || (s.log_every > 0 && step % s.log_every == 0) {
            let drift_norm = match snapshot.encoder_pre {
                Some(_) => encoder_drift_sq(snapshot)?.sqrt(),
                None => 0.0,
            };
            log.push(TrainLogRow {
                step,
                loss: parts.total,
                bc_loss: parts.bc,
                penalty: parts.penalty,
                drift_norm,
                lr: stats.lr,
                grad_norm: stats.grad_norm,
            });
        }
        if s.checkpoint_every > 0 && (step + 1) % s.checkpoint_every == 0 {
            hook(step + 1, snapshot)?;
        }
    }
    Ok(log)
}

/// Trains every block from a fresh initialization on broad data. The final
/// encoder becomes the drift reference.
pub fn pretrain(cfg: &PretrainConfig, policy: &PolicyConfig, samples: &[FlowSample]) -> Result<TrainOutput> {
    pretrain_with_hook(cfg, policy, samples, &mut |_, _| Ok(()))
}

pub fn pretrain_with_hook(
    cfg: &PretrainConfig,
    policy: &PolicyConfig,
    samples: &[FlowSample],
    hook: &mut CheckpointHook<'_>,
) -> Result<TrainOutput> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut snapshot = PolicySnapshot::new(policy.clone(), cfg.seed)?;
    let settings = LoopSettings {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        optimizer: &cfg.optimizer,
        seed: cfg.seed,
        lambda: 0.0,
        log_every: cfg.log_every,
        checkpoint_every: cfg.checkpoint_every,
    };
    let log = train_loop(&mut snapshot, samples, &settings, hook)?;
    snapshot.freeze_encoder_reference();
    snapshot.mode = SnapshotMode::Pretrained;
    snapshot.zero_grads();
    Ok(TrainOutput { snapshot, log })
}

/// Sets trainability and adapters on a copy of `pretrained` for `cfg.mode`.
pub fn prepare_posttrain(cfg: &TrainConfig, pretrained: &PolicySnapshot) -> Result<PolicySnapshot> {
    cfg.validate()?;
    if pretrained.encoder_pre.is_none() {
        return Err(Error::State("post-training needs a pretrained snapshot with an encoder reference".into()));
    }
    if pretrained.backbone.has_adapters() || pretrained.expert.has_adapters() {
        return Err(Error::State("snapshot already carries adapters".into()));
    }
    let mut s = pretrained.clone();
    s.zero_grads();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[ADAPTER_STREAM]));
    let full = cfg.mode == TrainMode::FullFt;
    s.encoder.set_trainable(cfg.mode != TrainMode::FrozenVis);
    for b in s.embeddings.blocks_mut() {
        b.trainable = full;
    }
    s.backbone.set_trainable(true);
    s.expert.set_trainable(true);
    if !full {
        if let Some(a) = cfg.adapters.backbone {
            s.backbone.attach_adapters(a.rank, a.alpha, &mut rng)?;
        }
        if let Some(a) = cfg.adapters.expert {
            s.expert.attach_adapters(a.rank, a.alpha, &mut rng)?;
        }
    }
    s.mode = match cfg.mode {
        TrainMode::Delock => SnapshotMode::Delock,
        TrainMode::NoVisReg => SnapshotMode::NoVisReg,
        TrainMode::FrozenVis => SnapshotMode::FrozenVis,
        TrainMode::FullFt => SnapshotMode::FullFt,
    };
    Ok(s)
}

/// Post-trains a copy of `pretrained` on narrow data. `encoder_pre` is
/// carried through unchanged.
pub fn posttrain(cfg: &TrainConfig, pretrained: &PolicySnapshot, samples: &[FlowSample]) -> Result<TrainOutput> {
    posttrain_with_hook(cfg, pretrained, samples, &mut |_, _| Ok(()))
}

pub fn posttrain_with_hook(
    cfg: &TrainConfig,
    pretrained: &PolicySnapshot,
    samples: &[FlowSample],
    hook: &mut CheckpointHook<'_>,
) -> Result<TrainOutput> {
    let mut snapshot = prepare_posttrain(cfg, pretrained)?;
    let settings = LoopSettings {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        optimizer: &cfg.optimizer,
        seed: cfg.seed,
        lambda: cfg.lambda,
        log_every: cfg.log_every,
        checkpoint_every: cfg.checkpoint_every,
    };
    let log = train_loop(&mut snapshot, samples, &settings, hook)?;
    snapshot.zero_grads();
    Ok(TrainOutput { snapshot, log })
}

/// Parameter-wise `alpha * finetuned + (1 - alpha) * pretrained`. The
/// endpoints return the respective input parameters bitwise.
pub fn retain_interpolate(finetuned: &PolicySnapshot, pretrained: &PolicySnapshot, alpha: f64) -> Result<PolicySnapshot> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("interpolation weight {alpha} outside [0, 1]")));
    }
    let (a, b) = (finetuned.blocks(), pretrained.blocks());
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| !x.same_layout(y)) {
        return Err(Error::Shape("snapshots differ in structure".into()));
    }
    let mut out = finetuned.clone();
    if alpha == 0.0 {
        for (dst, src) in out.blocks_mut().into_iter().zip(&b) {
            dst.values.clone_from(&src.values);
        }
    } else if alpha < 1.0 {
        for (dst, src) in out.blocks_mut().into_iter().zip(&b) {
            for (x, y) in dst.values.iter_mut().zip(&src.values) {
                *x = alpha * *x + (1.0 - alpha) * y;
            }
        }
    }
    out.encoder_pre = pretrained.encoder_pre.clone();
    out.mode = SnapshotMode::Retain;
    out.zero_grads();
    Ok(out)
}
