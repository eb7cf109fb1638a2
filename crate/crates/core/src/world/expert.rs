//! Scripted demonstrator: straight-line reach, grasp, transport, release.

use rand_distr::{Distribution, Normal};

use super::state::{Action, WorldState, MAX_DELTA};
use super::task::{Goal, TaskSpec};
use crate::error::Result;
use crate::policy::{ActionChunk, Prompt, ACTION_DIM};
use crate::rng::Rng;

/// Default standard deviation of the translation jitter, workspace units.
pub const EXPERT_JITTER: f64 = 0.005;

/// Largest per-axis-bounded step along the straight line to `target`, and
/// whether the target is reached by it.
fn approach(from: [f64; 2], target: [f64; 2]) -> ([f64; 2], bool) {
    let d = [target[0] - from[0], target[1] - from[1]];
    let m = d[0].abs().max(d[1].abs());
    if m <= MAX_DELTA {
        (d, true)
    } else {
        let k = MAX_DELTA / m;
        ([d[0] * k, d[1] * k], false)
    }
}

/// Noise-free next action for `goal`. Grasp and release happen in the same
/// step that reaches the respective target.
pub fn expert_action(task: &TaskSpec, state: &WorldState, prompt: &Prompt, goal: Goal) -> Action {
    if task.success(state, prompt) {
        let grip = if matches!(goal, Goal::Open { .. }) { 1.0 } else { -1.0 };
        return Action { delta: [0.0; 2], grip };
    }
    let carry = |source: usize, dest: [f64; 2]| {
        if state.held_slot == source as i32 {
            let (delta, arrive) = approach(state.gripper_pos, dest);
            Action {
                delta,
                grip: if arrive { -1.0 } else { 1.0 },
            }
        } else if state.held_slot >= 0 {
            Action { delta: [0.0; 2], grip: -1.0 }
        } else {
            let (delta, arrive) = approach(state.gripper_pos, state.objects[source].pos);
            Action {
                delta,
                grip: if arrive { 1.0 } else { -1.0 },
            }
        }
    };
    match goal {
        Goal::Place { source, zone } => carry(source, state.zones[zone].pos),
        Goal::Stack { source, target } => carry(source, state.objects[target].pos),
        Goal::Open { zone } => {
            if state.held_slot >= 0 {
                return Action { delta: [0.0; 2], grip: -1.0 };
            }
            let (delta, arrive) = approach(state.gripper_pos, state.zones[zone].pos);
            Action {
                delta,
                grip: if arrive { 1.0 } else { -1.0 },
            }
        }
    }
}

/// Next `horizon` expert actions from `state`, planned by simulating the
/// world forward. Translations get Gaussian jitter with standard deviation
/// `jitter` and stay within the per-step bound.
pub fn scripted_expert(
    task: &TaskSpec,
    state: &WorldState,
    prompt: &Prompt,
    horizon: usize,
    jitter: f64,
    rng: &mut Rng,
) -> Result<ActionChunk> {
    let goal = task.resolve(state, prompt)?;
    let noise = Normal::new(0.0, jitter.max(0.0)).expect("non-negative std");
    let mut s = state.clone();
    let mut actions = Vec::with_capacity(horizon * ACTION_DIM);
    for _ in 0..horizon {
        let mut a = expert_action(task, &s, prompt, goal);
        if jitter > 0.0 {
            for d in &mut a.delta {
                *d = (*d + noise.sample(rng)).clamp(-MAX_DELTA, MAX_DELTA);
            }
        }
        actions.extend(a.to_normalized());
        s = s.step(a).0;
    }
    ActionChunk::from_flat(horizon, actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::prompt::{concept, verb, NULL};
    use crate::rng::rng_from_seed;
    use crate::world::task::{task, Region, TaskId};

    #[test]
    fn at_object_first_action_grasps() {
        let t = task(TaskId::TA);
        let mut rng = rng_from_seed(3);
        let mut s = t.sample_layout(Region::InDistribution, &mut rng).unwrap();
        let p = Prompt::new(verb::PUT, concept::RED, NULL);
        let Goal::Place { source, .. } = t.resolve(&s, &p).unwrap() else { panic!() };
        s.gripper_pos = s.objects[source].pos;
        let chunk = scripted_expert(&t, &s, &p, 10, 0.0, &mut rng).unwrap();
        assert!(chunk.step(0)[2] > 0.5);
        assert_eq!(&chunk.step(0)[..2], &[0.0, 0.0]);
    }

    #[test]
    fn noise_free_actions_are_straight() {
        let t = task(TaskId::TC);
        let mut rng = rng_from_seed(5);
        let s = t.sample_layout(Region::InDistribution, &mut rng).unwrap();
        let p = t.train_prompts[0];
        let Goal::Place { source, .. } = t.resolve(&s, &p).unwrap() else { panic!() };
        let chunk = scripted_expert(&t, &s, &p, 3, 0.0, &mut rng).unwrap();
        let d = [s.objects[source].pos[0] - s.gripper_pos[0], s.objects[source].pos[1] - s.gripper_pos[1]];
        let a = chunk.step(0);
        // parallel to the line to the object, saturated on the major axis
        assert!((a[0] * d[1] - a[1] * d[0]).abs() < 1e-12);
        assert!((a[0].abs().max(a[1].abs()) - 1.0).abs() < 1e-12);
        assert!(chunk.step(0).iter().zip(chunk.step(1)).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn unresolvable_prompt_errors() {
        let t = task(TaskId::TA);
        let mut rng = rng_from_seed(0);
        let s = t.sample_layout(Region::InDistribution, &mut rng).unwrap();
        let p = Prompt::new(verb::PUT, concept::YELLOW, NULL);
        assert!(matches!(
            scripted_expert(&t, &s, &p, 10, EXPERT_JITTER, &mut rng),
            Err(crate::Error::Resolution(_))
        ));
    }
}
