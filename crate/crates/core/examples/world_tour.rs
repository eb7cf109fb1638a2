//! Samples a layout for every task, lets the scripted expert solve each of
//! its prompts, and prints what the post-training camera sees.
//!
//! cargo run --release --example world_tour

use lockin::rng::rng_from_seed;
use lockin::world::{expert_episode, make_tasks, Domain, Region, EXPERT_JITTER};

fn main() -> lockin::Result<()> {
    let camera = Domain::Target.camera();
    for t in make_tasks() {
        let state = t.sample_layout(Region::InDistribution, &mut rng_from_seed(t.id.index()))?;
        println!("{} ({}), probe {:?}", t.id, t.name, t.probe);
        for o in state.objects.iter().filter(|o| o.present) {
            println!("  object class {} at ({:.2}, {:.2})", o.concept, o.pos[0], o.pos[1]);
        }
        for z in state.zones.iter().filter(|z| z.present) {
            println!("  zone kind {} at ({:.2}, {:.2})", z.kind, z.pos[0], z.pos[1]);
        }
        let seen = camera.observe(&state);
        println!(
            "  gripper at ({:.2}, {:.2}), observed at ({:.2}, {:.2})",
            state.gripper_pos[0], state.gripper_pos[1], seen.gripper_pos[0], seen.gripper_pos[1]
        );
        for prompt in t.all_prompts() {
            let trained = t.train_prompts.contains(&prompt);
            let (_, chunks, steps, success) =
                expert_episode(&t, state.clone(), prompt, Domain::Target, 10, EXPERT_JITTER, 7)?;
            println!(
                "  `{prompt}` ({}): expert {} in {steps} steps, {} chunks",
                if trained { "trained" } else { "novel" },
                if success { "succeeds" } else { "fails" },
                chunks.len()
            );
        }
        if t.has_shift {
            let shifted = t.sample_layout(Region::Shifted, &mut rng_from_seed(1))?;
            let o = shifted.objects.iter().find(|o| o.present).expect("layout has an object");
            println!("  shifted layout puts the object at x = {:.2}", o.pos[0]);
        }
    }
    Ok(())
}
