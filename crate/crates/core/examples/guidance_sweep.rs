//! Sweeps the guidance scale on a drift-regularized policy. Besides
//! success counts it measures, along expert trajectories for the novel
//! prompt, how far the guided chunk lands from the expert's chunk: this is
//! where over-extrapolation of open-loop chunks shows up.
//!
//! cargo run --release --example guidance_sweep [-- --smoke]

use lockin::harness::{eval_suite, trial_setup, Condition, Evaluated, Experiment, ExperimentConfig, Method};
use lockin::policy::PolicySnapshot;
use lockin::rng::rng_from_seed;
use lockin::sampler::{denoise, GuidanceSettings};
use lockin::world::{scripted_expert, task, Action, Domain, TaskId, TaskSpec};

const SCALES: [f64; 6] = [0.0, 1.0, 1.5, 2.0, 3.0, 5.0];

fn config() -> lockin::Result<ExperimentConfig> {
    let smoke = std::env::args().any(|a| a == "--smoke");
    let mut c = ExperimentConfig::preset(if smoke { "smoke" } else { "default" })?;
    c.out_dir = if smoke { "runs/examples-smoke" } else { "runs/examples" }.into();
    Ok(c)
}

/// Mean absolute error between the guided chunk and the expert's chunk for
/// each scale, over states visited by the expert.
fn chunk_error(snap: &PolicySnapshot, t: &TaskSpec, trials: usize) -> lockin::Result<Vec<f64>> {
    let camera = Domain::Target.camera();
    let mut err = vec![0.0; SCALES.len()];
    let mut count = 0;
    for trial in 0..trials {
        let (mut s, goal, _) = trial_setup(t, Condition::Novel, 7, trial)?;
        let mut rng = rng_from_seed(trial as u64);
        for k in 0..12 {
            if t.success(&s, &goal) {
                break;
            }
            let expert = scripted_expert(t, &s, &goal, 10, 0.0, &mut rng)?;
            let field = snap.conditioned(&camera.observe(&s))?;
            for (i, &w) in SCALES.iter().enumerate() {
                let g = GuidanceSettings { w, ..GuidanceSettings::default() }.resolve(goal, t.train_prompts[0]);
                let c = denoise(&field, &g, (trial * 100 + k) as u64)?;
                err[i] += c
                    .actions
                    .iter()
                    .zip(&expert.actions)
                    .map(|(a, b)| (a.clamp(-1.0, 1.0) - b).abs())
                    .sum::<f64>()
                    / c.actions.len() as f64;
            }
            count += 1;
            for a in expert.rows() {
                s = s.step(Action::from_normalized(a)).0;
            }
        }
    }
    Ok(err.into_iter().map(|e| e / count.max(1) as f64).collect())
}

fn main() -> lockin::Result<()> {
    let mut exp = Experiment::open(config()?)?;
    let (_, snap) = exp.method_snapshot(Method::Delock, 0)?;
    let trials = exp.config.trials;
    for id in [TaskId::TA, TaskId::TC] {
        let t = task(id);
        let err = chunk_error(&snap, &t, trials)?;
        println!("{id}: {:>6} {:>8} {:>8} {:>10}", "w", "trained", "novel", "chunk err");
        for (i, &w) in SCALES.iter().enumerate() {
            let g = GuidanceSettings { w, ..GuidanceSettings::default() };
            let what = Evaluated::Policy {
                snapshot: &snap,
                guidance: g,
                domain: Domain::Target,
            };
            let ok = |c| eval_suite(what, &t, c, trials, 0).iter().filter(|r| r.success).count();
            println!(
                "     {w:>6} {:>5}/{trials} {:>5}/{trials} {:>10.4}",
                ok(Condition::Trained),
                ok(Condition::Novel),
                err[i]
            );
        }
    }
    Ok(())
}
