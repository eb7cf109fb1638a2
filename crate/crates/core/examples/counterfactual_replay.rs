//! Records guided rollouts of the spatial probe with a novel prompt, replays
//! every planning step without guidance, and asks which of the two plans
//! heads for the plate seen in training while the mug is carried.
//!
//! cargo run --release --example counterfactual_replay [-- --smoke]

use lockin::harness::analysis::{angle_between, counterfactual_replay};
use lockin::harness::{run_trial, Condition, Evaluated, Experiment, ExperimentConfig, Method};
use lockin::sampler::{GuidanceConfig, GuidanceSettings};
use lockin::world::{task, Action, Domain, Goal, TaskId};

fn config() -> lockin::Result<ExperimentConfig> {
    let smoke = std::env::args().any(|a| a == "--smoke");
    let mut c = ExperimentConfig::preset(if smoke { "smoke" } else { "default" })?;
    c.out_dir = if smoke { "runs/examples-smoke" } else { "runs/examples" }.into();
    Ok(c)
}

fn main() -> lockin::Result<()> {
    let mut exp = Experiment::open(config()?)?;
    let (_, snap) = exp.method_snapshot(Method::Delock, 0)?;
    let t = task(TaskId::TC);
    let guidance = GuidanceSettings::default();
    let what = Evaluated::Policy {
        snapshot: &snap,
        guidance,
        domain: Domain::Target,
    };
    let (mut closer_off, mut carried) = (0, 0);
    for trial in 0..exp.config.trials {
        let (goal, traj) = run_trial(what, &t, Condition::Novel, 0, trial, false)?;
        let on = guidance.resolve(goal, t.train_prompts[0]);
        let off = GuidanceConfig::plain(goal, on.num_steps);
        let replay = counterfactual_replay(&traj, &snap, &on, &off)?;
        let trained_zone = match t.resolve(&traj.initial, &t.train_prompts[0])? {
            Goal::Place { zone, .. } => zone,
            other => unreachable!("T-C places objects, got {other:?}"),
        };
        let target = traj.initial.zones[trained_zone].pos;
        // walk the executed actions to know where the gripper was at each plan
        let mut s = traj.initial.clone();
        let mut trial_closer = 0;
        let mut trial_carried = 0;
        for (step, r) in traj.steps.iter().zip(&replay.steps) {
            if s.held_slot >= 0 {
                let to_target = [target[0] - s.gripper_pos[0], target[1] - s.gripper_pos[1]];
                let (a, b) = (r.on.step(0), r.off.step(0));
                let on_angle = angle_between([a[0], a[1]], to_target);
                let off_angle = angle_between([b[0], b[1]], to_target);
                trial_carried += 1;
                trial_closer += (off_angle < on_angle) as usize;
            }
            for a in step.chunk.rows() {
                s = s.step(Action::from_normalized(a)).0;
            }
        }
        println!(
            "trial {trial:>2} `{goal}` {}: {} plans, max chunk difference {:.3}, unguided plan closer to the trained plate in {trial_closer}/{trial_carried} carrying plans",
            if traj.success { "success" } else { "failure" },
            replay.steps.len(),
            replay.max_chunk_diff()
        );
        if traj.success {
            closer_off += trial_closer;
            carried += trial_carried;
        }
    }
    println!("successful trials: the unguided plan points closer to the trained plate in {closer_off}/{carried} carrying plans");
    Ok(())
}
