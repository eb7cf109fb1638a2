//! Pretrains a policy on broad demonstrations, post-trains it four ways on
//! narrow ones, and compares losses and encoder drift. Runs at reduced scale
//! so it finishes in about a minute.
//!
//! cargo run --release --example train_policy -- [pretrain_steps] [posttrain_steps]

use lockin::nn::Checkpoint;
use lockin::policy::{PolicyConfig, PolicySnapshot};
use lockin::trainer::{encoder_drift_sq, posttrain, pretrain, retain_interpolate, PretrainConfig, TrainConfig, TrainMode};
use lockin::world::{gen_demoset, DemoSpec};

fn main() -> lockin::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let pre_steps = args.first().copied().unwrap_or(4000);
    let post_steps = args.get(1).copied().unwrap_or(1500);

    let broad = gen_demoset(&DemoSpec::broad(400, 0))?.windowed_samples(2)?;
    let narrow = gen_demoset(&DemoSpec::narrow(20, 1))?.windowed_samples(1)?;
    println!("{} broad and {} narrow training windows", broad.len(), narrow.len());

    let mut cfg = PretrainConfig {
        steps: pre_steps,
        log_every: pre_steps / 5,
        ..PretrainConfig::default()
    };
    cfg.optimizer.schedule.decay_steps = pre_steps;
    let pre = pretrain(&cfg, &PolicyConfig::default(), &broad)?;
    for row in &pre.log {
        println!("pretrain step {:>6}  loss {:.4}  lr {:.2e}", row.step, row.loss, row.lr);
    }

    println!("{:<12} {:>10} {:>10} {:>12}", "mode", "bc loss", "penalty", "drift norm");
    let mut full_ft = None;
    for mode in [TrainMode::NoVisReg, TrainMode::Delock, TrainMode::FrozenVis, TrainMode::FullFt] {
        let cfg = TrainConfig {
            steps: post_steps,
            ..TrainConfig::for_mode(mode, 0)
        };
        let out = posttrain(&cfg, &pre.snapshot, &narrow)?;
        let last = out.log.last().expect("log has a final row");
        println!(
            "{:<12} {:>10.4} {:>10.2e} {:>12.4}",
            mode.as_str(),
            last.bc_loss,
            last.penalty,
            encoder_drift_sq(&out.snapshot)?.sqrt()
        );
        if mode == TrainMode::FullFt {
            full_ft = Some(out.snapshot);
        }
    }

    let ft = full_ft.expect("full fine-tuning ran");
    let mixed = retain_interpolate(&ft, &pre.snapshot, 0.5)?;
    println!("interpolated halfway: drift norm {:.4}", encoder_drift_sq(&mixed)?.sqrt());

    let path = std::env::temp_dir().join("lockin-train-policy.ckpt");
    mixed.to_checkpoint(0, post_steps, Default::default())?.save(&path)?;
    let back = PolicySnapshot::from_checkpoint(&Checkpoint::load(&path)?)?;
    println!("checkpoint {} reloads with mode {:?}", path.display(), back.mode);
    Ok(())
}
