use lockin::policy::Prompt;
use lockin::rng::{derive_seed, rng_from_seed};
use lockin::world::{expert_episode, gen_demoset, make_tasks, DemoSpec, Domain, Region, TaskId, EXPERT_JITTER};

#[test]
fn expert_succeeds_on_nearly_all_layouts() {
    for t in make_tasks() {
        let prompts: Vec<Prompt> = t.all_prompts();
        let mut ok = 0;
        let mut steps = 0;
        for i in 0..1000u64 {
            let seed = derive_seed(99, &[t.id.index(), i]);
            let region = if t.has_shift { Region::Broad } else { Region::InDistribution };
            let s = t.sample_layout(region, &mut rng_from_seed(seed)).unwrap();
            let p = prompts[i as usize % prompts.len()];
            let (_, _, n, success) = expert_episode(&t, s, p, Domain::Target, 10, EXPERT_JITTER, seed).unwrap();
            ok += success as usize;
            steps += n;
        }
        println!("{}: {ok}/1000 mean steps {:.1}", t.id, steps as f64 / 1000.0);
        assert!(ok >= 990, "{} expert succeeded on {ok}/1000", t.id);
    }
}

#[test]
fn broad_histogram_is_uniform() {
    let set = gen_demoset(&DemoSpec::broad(500, 3)).unwrap();
    let h = set.prompt_histogram();
    assert_eq!(h.len(), 10);
    let expected = 500.0 / h.len() as f64;
    for (k, &n) in &h {
        assert!((n as f64 - expected).abs() <= 0.1 * expected, "{k}: {n}");
    }
}

#[test]
fn narrow_demos_replay_to_success() {
    let set = gen_demoset(&DemoSpec::narrow(100, 5)).unwrap();
    assert_eq!(set.len(), 500);
    for ep in &set.episodes {
        assert!(ep.replay(), "{} `{}` seed {}", ep.task, ep.prompt, ep.layout_seed);
        assert!(lockin::world::task(ep.task).train_prompts.contains(&ep.prompt));
    }
    let te: Vec<_> = set.episodes.iter().filter(|e| e.task == TaskId::TE).collect();
    assert!(!te.is_empty());
}
