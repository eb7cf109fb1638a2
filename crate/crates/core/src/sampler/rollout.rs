//! Closed-loop execution: observe, plan one chunk, run it open-loop, repeat.

use serde::{Deserialize, Serialize};

use super::{denoise, denoise_traced, FieldRecord, GuidanceConfig};
use crate::error::{Error, Result};
use crate::policy::{ActionChunk, Observation, PolicySnapshot, Prompt};
use crate::rng::{derive_seed, rng_from_seed};
use crate::world::{scripted_expert, Action, Camera, TaskSpec, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedChunk {
    pub chunk: ActionChunk,
    /// Raw velocity fields per Euler step, when traced.
    pub fields: Vec<FieldRecord>,
}

/// Anything that turns an observation into the next action chunk.
pub trait ChunkPolicy: Sync {
    fn plan(&self, state: &WorldState, obs: &Observation, noise_seed: u64, trace: bool) -> Result<PlannedChunk>;
}

/// A trained snapshot sampled with fixed guidance.
pub struct SnapshotPolicy<'a> {
    pub snapshot: &'a PolicySnapshot,
    pub guidance: GuidanceConfig,
}

impl ChunkPolicy for SnapshotPolicy<'_> {
    fn plan(&self, _: &WorldState, obs: &Observation, noise_seed: u64, trace: bool) -> Result<PlannedChunk> {
        let field = self.snapshot.conditioned(obs)?;
        if trace {
            let (chunk, fields) = denoise_traced(&field, &self.guidance, noise_seed)?;
            Ok(PlannedChunk { chunk, fields })
        } else {
            Ok(PlannedChunk {
                chunk: denoise(&field, &self.guidance, noise_seed)?,
                fields: Vec::new(),
            })
        }
    }
}

/// The scripted expert, reading the true state instead of the observation.
pub struct ExpertPolicy<'a> {
    pub task: &'a TaskSpec,
    pub prompt: Prompt,
    pub horizon: usize,
    pub jitter: f64,
}

impl ChunkPolicy for ExpertPolicy<'_> {
    fn plan(&self, state: &WorldState, _: &Observation, noise_seed: u64, _: bool) -> Result<PlannedChunk> {
        let mut rng = rng_from_seed(noise_seed);
        Ok(PlannedChunk {
            chunk: scripted_expert(self.task, state, &self.prompt, self.horizon, self.jitter, &mut rng)?,
            fields: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// World step at which the chunk was planned.
    pub world_step: usize,
    pub obs: Observation,
    pub obs_digest: String,
    pub noise_seed: u64,
    pub chunk: ActionChunk,
    pub fields: Vec<FieldRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: WorldState,
    pub steps: Vec<TrajectoryStep>,
    pub final_state: WorldState,
    pub world_steps: usize,
    pub success: bool,
}

/// Runs `policy` from `initial` for at most `max_steps` world steps, judging
/// success against `goal`. Chunk `k` is sampled with noise seed
/// `derive_seed(seed, [k])`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    policy: &dyn ChunkPolicy,
    task: &TaskSpec,
    initial: &WorldState,
    goal: &Prompt,
    camera: &Camera,
    seed: u64,
    max_steps: usize,
    trace: bool,
) -> Result<Trajectory> {
    let mut s = initial.clone();
    let mut steps = Vec::new();
    let mut n = 0;
    let mut success = false;
    'outer: while n < max_steps {
        let obs = camera.observe(&s);
        let noise_seed = derive_seed(seed, &[steps.len() as u64]);
        let planned = policy
            .plan(&s, &obs, noise_seed, trace)
            .map_err(|e| Error::State(format!("planning failed at world step {n}: {e}")))?;
        let rows: Vec<_> = planned.chunk.rows().collect();
        steps.push(TrajectoryStep {
            world_step: n,
            obs_digest: obs.digest(),
            obs,
            noise_seed,
            chunk: planned.chunk,
            fields: planned.fields,
        });
        for a in rows {
            s = s.step(Action::from_normalized(a)).0;
            n += 1;
            if task.success(&s, goal) {
                success = true;
                break 'outer;
            }
            if n >= max_steps {
                break 'outer;
            }
        }
    }
    Ok(Trajectory {
        initial: initial.clone(),
        steps,
        final_state: s,
        world_steps: n,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyConfig, DEFAULT_HORIZON};
    use crate::world::{task, Domain, Region, TaskId, EXPERT_JITTER};

    #[test]
    fn zero_budget_is_empty_failure() {
        let t = task(TaskId::TA);
        let s = t.sample_layout(Region::InDistribution, &mut rng_from_seed(0)).unwrap();
        let p = ExpertPolicy {
            task: &t,
            prompt: t.train_prompts[0],
            horizon: DEFAULT_HORIZON,
            jitter: EXPERT_JITTER,
        };
        let tr = rollout(&p, &t, &s, &t.train_prompts[0], &Camera::identity(), 0, 0, false).unwrap();
        assert!(tr.steps.is_empty() && !tr.success);
    }

    #[test]
    fn expert_rollouts_succeed() {
        for t in crate::world::make_tasks() {
            for (i, prompt) in t.all_prompts().into_iter().enumerate() {
                let s = t.sample_layout(Region::InDistribution, &mut rng_from_seed(i as u64)).unwrap();
                let p = ExpertPolicy {
                    task: &t,
                    prompt,
                    horizon: DEFAULT_HORIZON,
                    jitter: EXPERT_JITTER,
                };
                let tr = rollout(&p, &t, &s, &prompt, &Domain::Target.camera(), 5, 120, false).unwrap();
                assert!(tr.success, "{} `{prompt}`", t.id);
            }
        }
    }

    #[test]
    fn snapshot_rollouts_are_deterministic() {
        let cfg = PolicyConfig {
            encoder_hidden: vec![8],
            feature_dim: 8,
            backbone_hidden: vec![8],
            cond_dim: 8,
            expert_hidden: vec![16],
            ..PolicyConfig::default()
        };
        let snap = PolicySnapshot::new(cfg, 1).unwrap();
        let t = task(TaskId::TC);
        let s = t.sample_layout(Region::InDistribution, &mut rng_from_seed(2)).unwrap();
        let goal = t.novel_prompts[0];
        let policy = SnapshotPolicy {
            snapshot: &snap,
            guidance: crate::sampler::GuidanceSettings::default().resolve(goal, t.train_prompts[0]),
        };
        let a = rollout(&policy, &t, &s, &goal, &Camera::identity(), 9, 35, true).unwrap();
        let b = rollout(&policy, &t, &s, &goal, &Camera::identity(), 9, 35, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps.len(), 4);
        assert!(a.steps.iter().all(|st| st.fields.len() == 10 && st.fields[0].negative.is_some()));
    }
}
