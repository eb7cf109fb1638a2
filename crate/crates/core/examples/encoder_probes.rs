//! Encoder drift and prompt sensitivity of every post-training variant:
//! how far the encoder moved, and how much swapping the prompt still moves
//! the conditioning vector.
//!
//! cargo run --release --example encoder_probes [-- --smoke]

use lockin::harness::{drift_report, mean_prompt_sensitivity, Experiment, ExperimentConfig, Method};
use lockin::world::{task, TaskId};

fn config() -> lockin::Result<ExperimentConfig> {
    let smoke = std::env::args().any(|a| a == "--smoke");
    let mut c = ExperimentConfig::preset(if smoke { "smoke" } else { "default" })?;
    c.out_dir = if smoke { "runs/examples-smoke" } else { "runs/examples" }.into();
    Ok(c)
}

fn main() -> lockin::Result<()> {
    let mut exp = Experiment::open(config()?)?;
    let (ta, tc) = (task(TaskId::TA), task(TaskId::TC));
    let pre = exp.pretrained()?;
    let concept_pre = mean_prompt_sensitivity(&pre, TaskId::TA, &ta.train_prompts[0], &ta.novel_prompts[0], 0)?;
    let spatial_pre = mean_prompt_sensitivity(&pre, TaskId::TC, &tc.train_prompts[0], &tc.novel_prompts[0], 0)?;
    println!("{:<16} {:>12} {:>10} {:>12} {:>12}", "snapshot", "drift l2^2", "feat cos", "concept", "spatial");
    println!("{:<16} {:>12.4e} {:>10.6} {:>12.4e} {:>12.4e}", "pretrained", 0.0, 1.0, concept_pre, spatial_pre);
    for m in [Method::Retain, Method::Sft, Method::FrozenVis, Method::Delock] {
        let (_, s) = exp.method_snapshot(m, 0)?;
        let d = drift_report(&s, 0)?;
        let concept = mean_prompt_sensitivity(&s, TaskId::TA, &ta.train_prompts[0], &ta.novel_prompts[0], 0)?;
        let spatial = mean_prompt_sensitivity(&s, TaskId::TC, &tc.train_prompts[0], &tc.novel_prompts[0], 0)?;
        println!(
            "{:<16} {:>12.4e} {:>10.6} {:>12.4e} {:>12.4e}",
            m.label(),
            d.param_l2_sq,
            d.feature_cosine,
            concept,
            spatial
        );
    }
    Ok(())
}
