//! The sweep that fixed the default drift penalty weight: post-train with a
//! range of weights, then measure drift and novel-prompt success with and
//! without guidance on the concept (T-A) and spatial (T-C) probes.
//! Checkpoints are cached under `runs/examples`.
//!
//! cargo run --release --example calibrate_lambda [-- --smoke]

use lockin::harness::{eval_suite, Condition, Evaluated, Experiment, ExperimentConfig, Method};
use lockin::sampler::GuidanceSettings;
use lockin::trainer::{encoder_drift_sq, TrainConfig};
use lockin::world::{task, Domain, TaskId};

fn config() -> lockin::Result<ExperimentConfig> {
    let smoke = std::env::args().any(|a| a == "--smoke");
    let mut c = ExperimentConfig::preset(if smoke { "smoke" } else { "default" })?;
    c.out_dir = if smoke { "runs/examples-smoke" } else { "runs/examples" }.into();
    Ok(c)
}

fn main() -> lockin::Result<()> {
    let mut exp = Experiment::open(config()?)?;
    let trials = exp.config.trials;
    let guided = exp.config.guidance;
    println!("{:>8} {:>8} {:>14} {:>14}", "lambda", "drift", "plain A/C", "guided A/C");
    let mut best = (f64::NAN, -1.0);
    for lambda in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
        let cfg = TrainConfig {
            lambda,
            ..exp.config.train_config(Method::Delock, 0)
        };
        let snap = exp.posttrained(&cfg)?;
        let rate = |g: GuidanceSettings, id: TaskId| {
            let what = Evaluated::Policy {
                snapshot: &snap,
                guidance: g,
                domain: Domain::Target,
            };
            let rows = eval_suite(what, &task(id), Condition::Novel, trials, 0);
            rows.iter().filter(|r| r.success).count()
        };
        let plain = (rate(GuidanceSettings::plain(), TaskId::TA), rate(GuidanceSettings::plain(), TaskId::TC));
        let cpg = (rate(guided, TaskId::TA), rate(guided, TaskId::TC));
        println!(
            "{lambda:>8} {:>8.4} {:>8}/{:<5} {:>8}/{:<5}",
            encoder_drift_sq(&snap)?.sqrt(),
            plain.0,
            plain.1,
            cpg.0,
            cpg.1
        );
        let score = (cpg.0 + cpg.1) as f64;
        if score > best.1 {
            best = (lambda, score);
        }
    }
    println!("best guided novel success at lambda = {}", best.0);
    Ok(())
}
