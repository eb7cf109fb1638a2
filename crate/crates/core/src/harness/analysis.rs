//! Mechanistic probes: encoder drift, prompt sensitivity of the backbone,
//! and counterfactual replay of recorded trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ActionChunk, Observation, PolicySnapshot, Prompt};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::{denoise, GuidanceConfig, Trajectory};
use crate::trainer::encoder_drift_sq;
use crate::world::{task, Domain, Region, TaskId};

/// Observations used by the drift and sensitivity probes.
pub const PROBE_OBSERVATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// Squared L2 distance between the encoder and its reference.
    pub param_l2_sq: f64,
    /// Mean cosine similarity of encoder features under the current and
    /// reference weights.
    pub feature_cosine: f64,
    pub observations: usize,
}

/// `n` seeded in-distribution observations of `tasks`, cycled, seen from
/// the post-training robot.
pub fn probe_observations(tasks: &[TaskId], n: usize, seed: u64) -> Result<Vec<Observation>> {
    if tasks.is_empty() {
        return Err(Error::Config("probe needs at least one task".into()));
    }
    let camera = Domain::Target.camera();
    (0..n)
        .map(|i| {
            let t = task(tasks[i % tasks.len()]);
            let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
            Ok(camera.observe(&t.sample_layout(Region::InDistribution, &mut rng)?))
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The snapshot with its encoder reset to the reference weights.
pub fn reference_encoder(snapshot: &PolicySnapshot) -> Result<PolicySnapshot> {
    let pre = snapshot
        .encoder_pre
        .as_ref()
        .ok_or_else(|| Error::State("snapshot has no encoder reference".into()))?;
    let mut out = snapshot.clone();
    for (dst, src) in out.encoder.blocks_mut().into_iter().zip(pre) {
        dst.values.clone_from(&src.values);
    }
    Ok(out)
}

pub fn drift_report(snapshot: &PolicySnapshot, seed: u64) -> Result<DriftReport> {
    let param_l2_sq = encoder_drift_sq(snapshot)?;
    let reference = reference_encoder(snapshot)?;
    let obs = probe_observations(&TaskId::ALL, PROBE_OBSERVATIONS, seed)?;
    let mut total = 0.0;
    for o in &obs {
        total += cosine(&snapshot.encode_obs(o)?, &reference.encode_obs(o)?);
    }
    Ok(DriftReport {
        param_l2_sq,
        feature_cosine: total / obs.len() as f64,
        observations: obs.len(),
    })
}

/// Cosine distance between the backbone outputs for `a` and `b` on one
/// observation. The model has no attention maps, so this distance stands in
/// for how much the prompt moves the conditioning.
pub fn prompt_sensitivity(snapshot: &PolicySnapshot, o: &Observation, a: &Prompt, b: &Prompt) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let features = snapshot.encode_obs(o)?;
    let ca = snapshot.backbone_output(a, &features)?;
    let cb = snapshot.backbone_output(b, &features)?;
    Ok(1.0 - cosine(&ca, &cb))
}

/// [`prompt_sensitivity`] averaged over [`PROBE_OBSERVATIONS`] layouts of `id`.
pub fn mean_prompt_sensitivity(snapshot: &PolicySnapshot, id: TaskId, a: &Prompt, b: &Prompt, seed: u64) -> Result<f64> {
    let obs = probe_observations(&[id], PROBE_OBSERVATIONS, seed)?;
    let mut total = 0.0;
    for o in &obs {
        total += prompt_sensitivity(snapshot, o, a, b)?;
    }
    Ok(total / obs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub world_step: usize,
    pub on: ActionChunk,
    pub off: ActionChunk,
    /// L2 norm of the difference of the two chunks.
    pub chunk_diff: f64,
    /// Angle in radians between the first-step displacements; 0 when
    /// either displacement vanishes.
    pub first_step_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub steps: Vec<ReplayStep>,
}

impl ReplayRecord {
    pub fn max_chunk_diff(&self) -> f64 {
        self.steps.iter().map(|s| s.chunk_diff).fold(0.0, f64::max)
    }

    /// Columnar text: one row per planning step.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("world_step\tchunk_diff\tfirst_step_angle\ton_dx\ton_dy\toff_dx\toff_dy\n");
        for s in &self.steps {
            let (a, b) = (s.on.step(0), s.off.step(0));
            out.push_str(&format!(
                "{}\t{:.6e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                s.world_step, s.chunk_diff, s.first_step_angle, a[0], a[1], b[0], b[1]
            ));
        }
        out
    }
}

/// Angle in radians between two planar vectors; 0 when either is zero.
pub fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    let na = a[0].hypot(a[1]);
    let nb = b[0].hypot(b[1]);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Re-denoises every recorded observation of `traj` with its recorded noise
/// seed under `on` and `off`.
pub fn counterfactual_replay(
    traj: &Trajectory,
    snapshot: &PolicySnapshot,
    on: &GuidanceConfig,
    off: &GuidanceConfig,
) -> Result<ReplayRecord> {
    if traj.steps.is_empty() && traj.world_steps > 0 {
        return Err(Error::State("trajectory has no recorded observations or noise seeds".into()));
    }
    let mut steps = Vec::with_capacity(traj.steps.len());
    for s in &traj.steps {
        if s.obs.digest() != s.obs_digest {
            return Err(Error::State(format!(
                "observation at world step {} does not match its digest",
                s.world_step
            )));
        }
        let field = snapshot.conditioned(&s.obs)?;
        let a = denoise(&field, on, s.noise_seed)?;
        let b = denoise(&field, off, s.noise_seed)?;
        let chunk_diff = a
            .actions
            .iter()
            .zip(&b.actions)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let (fa, fb) = (a.step(0), b.step(0));
        steps.push(ReplayStep {
            world_step: s.world_step,
            first_step_angle: angle_between([fa[0], fa[1]], [fb[0], fb[1]]),
            chunk_diff,
            on: a,
            off: b,
        });
    }
    Ok(ReplayRecord { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::eval::{run_trial, Condition, Evaluated};
    use crate::policy::PolicyConfig;
    use crate::sampler::GuidanceSettings;

    fn tiny() -> PolicySnapshot {
        let cfg = PolicyConfig {
            encoder_hidden: vec![8],
            feature_dim: 8,
            backbone_hidden: vec![8],
            cond_dim: 8,
            expert_hidden: vec![16],
            ..PolicyConfig::default()
        };
        let mut s = PolicySnapshot::new(cfg, 4).unwrap();
        s.freeze_encoder_reference();
        s
    }

    #[test]
    fn fresh_reference_has_no_drift() {
        let r = drift_report(&tiny(), 0).unwrap();
        assert_eq!(r.param_l2_sq, 0.0);
        assert_eq!(r.feature_cosine, 1.0);
        assert_eq!(r.observations, PROBE_OBSERVATIONS);
        let mut s = tiny();
        s.encoder_pre = None;
        assert!(matches!(drift_report(&s, 0), Err(Error::State(_))));
    }

    #[test]
    fn perturbed_encoder_drifts() {
        let mut s = tiny();
        s.encoder.blocks_mut()[0].values[0] += 0.5;
        let r = drift_report(&s, 0).unwrap();
        assert!((r.param_l2_sq - 0.25).abs() < 1e-12);
        assert!(r.feature_cosine < 1.0);
    }

    #[test]
    fn sensitivity_is_zero_on_identical_prompts_and_symmetric() {
        let s = tiny();
        let t = task(TaskId::TA);
        let o = &probe_observations(&[TaskId::TA], 1, 3).unwrap()[0];
        let (a, b) = (t.train_prompts[0], t.novel_prompts[0]);
        assert_eq!(prompt_sensitivity(&s, o, &a, &a).unwrap(), 0.0);
        let ab = prompt_sensitivity(&s, o, &a, &b).unwrap();
        let ba = prompt_sensitivity(&s, o, &b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-15 && ab > 0.0);
    }

    #[test]
    fn replay_degenerates_at_unit_scale_and_equal_prompts() {
        let s = tiny();
        let t = task(TaskId::TC);
        let what = Evaluated::Policy {
            snapshot: &s,
            guidance: GuidanceSettings::default(),
            domain: Domain::Target,
        };
        let (goal, traj) = run_trial(what, &t, Condition::Novel, 0, 0, false).unwrap();
        let off = GuidanceConfig::plain(goal, 10);
        let unit = GuidanceConfig { w: 1.0, ..GuidanceSettings::default().resolve(goal, t.train_prompts[0]) };
        let same = GuidanceSettings::default().resolve(goal, goal);
        for on in [unit, same] {
            let r = counterfactual_replay(&traj, &s, &on, &off).unwrap();
            assert!(!r.steps.is_empty());
            assert!(r.steps.iter().all(|st| st.chunk_diff == 0.0 && st.on == st.off));
        }
        let on = GuidanceSettings::default().resolve(goal, t.train_prompts[0]);
        let r = counterfactual_replay(&traj, &s, &on, &off).unwrap();
        assert_eq!(r.steps[0].on, traj.steps[0].chunk);
        assert!(r.max_chunk_diff() > 0.0);
        assert_eq!(r.to_tsv().lines().count(), r.steps.len() + 1);
    }

    #[test]
    fn replay_rejects_tampered_observations() {
        let s = tiny();
        let t = task(TaskId::TA);
        let what = Evaluated::Policy {
            snapshot: &s,
            guidance: GuidanceSettings::plain(),
            domain: Domain::Target,
        };
        let (goal, mut traj) = run_trial(what, &t, Condition::Trained, 0, 0, false).unwrap();
        traj.steps[0].obs.gripper_pos[0] += 0.1;
        let cfg = GuidanceConfig::plain(goal, 10);
        assert!(matches!(counterfactual_replay(&traj, &s, &cfg, &cfg), Err(Error::State(_))));
    }

    #[test]
    fn angles() {
        assert_eq!(angle_between([1.0, 0.0], [2.0, 0.0]), 0.0);
        assert!((angle_between([1.0, 0.0], [0.0, 3.0]) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(angle_between([0.0, 0.0], [1.0, 0.0]), 0.0);
    }
}
