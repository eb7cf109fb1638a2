//! The denoising sampler on its own: Euler convergence on a linear field,
//! and how contrastive guidance mixes two prompt-conditioned fields.
//!
//! cargo run --release --example flow_sampling

use lockin::policy::{PolicyConfig, PolicySnapshot, Prompt};
use lockin::sampler::{denoise, denoise_traced, guided_field, initial_noise, GuidanceConfig, VelocityField};
use lockin::world::{task, Domain, Region, TaskId};

/// Decay toward zero along the sampling direction.
struct Decay;

impl VelocityField for Decay {
    fn chunk_width(&self) -> usize {
        30
    }
    fn horizon(&self) -> usize {
        10
    }
    fn velocity(&self, _: &Prompt, a: &[f64], _: f64) -> lockin::Result<Vec<f64>> {
        Ok(a.to_vec())
    }
}

fn main() -> lockin::Result<()> {
    let p = Prompt::parse("put/-/right")?;
    let eps = initial_noise(30, 0);
    println!("Euler steps  max error vs exp(-1) solution");
    for n in [5, 10, 20, 40, 80] {
        let out = denoise(&Decay, &GuidanceConfig::plain(p, n), 0)?;
        let err = out
            .actions
            .iter()
            .zip(&eps)
            .map(|(o, e)| (o - e * (-1.0f64).exp()).abs())
            .fold(0.0, f64::max);
        println!("{n:>11}  {err:.3e}");
    }

    let v_pos = [0.4, -0.2, 1.0];
    let v_neg = [0.1, -0.2, 0.5];
    for w in [0.0, 1.0, 2.0, 3.0] {
        println!("w = {w}: guided field {:?}", guided_field(&v_pos, &v_neg, w)?);
    }

    // An untrained policy still exposes the mechanics: two prompts, two
    // fields, and the per-step record of both.
    let snap = PolicySnapshot::new(PolicyConfig::default(), 0)?;
    let t = task(TaskId::TC);
    let state = t.sample_layout(Region::InDistribution, &mut lockin::rng::rng_from_seed(3))?;
    let field = snap.conditioned(&Domain::Target.camera().observe(&state))?;
    let cfg = GuidanceConfig {
        w: 3.0,
        num_steps: 10,
        positive: t.novel_prompts[0],
        negative: t.train_prompts[0],
        cpg_enabled: true,
    };
    let (chunk, fields) = denoise_traced(&field, &cfg, 9)?;
    let plain = denoise(&field, &GuidanceConfig::plain(cfg.positive, 10), 9)?;
    println!(
        "guided vs plain chunk: max difference {:.3e}, {} field records, first step {:?}",
        chunk.max_abs_diff(&plain),
        fields.len(),
        chunk.step(0)
    );
    let same = GuidanceConfig { negative: cfg.positive, ..cfg };
    println!("equal prompts reproduce plain sampling: {}", denoise(&field, &same, 9)? == plain);
    Ok(())
}
