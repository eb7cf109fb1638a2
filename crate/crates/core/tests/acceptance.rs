//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! `criterion N: PASS|FAIL` line each, and exits non-zero if any fails.
//!
//! Criteria 1-4 are exact contracts. Criterion 5 is byte-level determinism
//! of a full (small) pipeline. Criteria 6-10 share one experiment: the
//! default configuration post-trained on seeds 0-4 and evaluated on the
//! concept probe T-A and the spatial probe T-C, 20 trials per cell.
//! Criterion 11 times the full default matrix from an empty run directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use lockin::harness::{drift_report, CellReport, Condition, Experiment, ExperimentConfig, Method};
use lockin::nn::{finite_diff_grad, max_rel_error};
use lockin::policy::flow::draw_noise;
use lockin::policy::{PolicyConfig, PolicySnapshot, Prompt};
use lockin::rng::{normal_vec, rng_from_seed};
use lockin::sampler::{denoise, guided_field, initial_noise, GuidanceConfig, GuidanceSettings, VelocityField};
use lockin::trainer::{delock_loss, encoder_drift_sq, posttrain, prepare_posttrain, retain_interpolate, TrainConfig, TrainMode};
use lockin::world::{task, Domain, TaskId};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TRIALS: usize = 20;
const DRIFT_LAMBDAS: [f64; 3] = [1e-3, 1e-1, 10.0];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn report(n: u32, v: &Verdict, secs: f64) {
    println!(
        "criterion {n}: {} ({secs:.1}s) {}",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
}

fn pct(x: f64) -> String {
    format!("{:.0}%", 100.0 * x)
}

// 1. Guidance degeneracies.

/// Field that depends on the prompt and the chunk.
struct Probe;

impl VelocityField for Probe {
    fn chunk_width(&self) -> usize {
        30
    }
    fn horizon(&self) -> usize {
        10
    }
    fn velocity(&self, p: &Prompt, a: &[f64], t: f64) -> lockin::Result<Vec<f64>> {
        let k = 1.0 + p.concept as f64 + 3.0 * p.spatial as f64;
        Ok(a.iter().enumerate().map(|(i, x)| (k * x).sin() + t * i as f64 / k).collect())
    }
}

fn criterion_1() -> Verdict {
    let mut rng = rng_from_seed(11);
    let mut ok = true;
    for _ in 0..100 {
        let p = normal_vec(&mut rng, 30);
        let n = normal_vec(&mut rng, 30);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        ok &= bits(&guided_field(&p, &n, 1.0).unwrap()) == bits(&p);
        ok &= bits(&guided_field(&p, &n, 0.0).unwrap()) == bits(&n);
    }
    let pos = Prompt::parse("put/-/right").unwrap();
    let neg = Prompt::parse("put/-/left").unwrap();
    let plain = GuidanceConfig::plain(pos, 10);
    for seed in 0..20 {
        for w in [0.5, 3.0, 7.0] {
            let same = GuidanceConfig {
                w,
                num_steps: 10,
                positive: pos,
                negative: pos,
                cpg_enabled: true,
            };
            ok &= denoise(&Probe, &same, seed).unwrap() == denoise(&Probe, &plain, seed).unwrap();
        }
        let unit = GuidanceConfig {
            w: 1.0,
            negative: neg,
            cpg_enabled: true,
            ..plain
        };
        ok &= denoise(&Probe, &unit, seed).unwrap() == denoise(&Probe, &plain, seed).unwrap();
    }
    // the same on a real policy
    let snap = PolicySnapshot::new(PolicyConfig::default(), 5).unwrap();
    let t = task(TaskId::TC);
    let s = t.sample_layout(lockin::world::Region::InDistribution, &mut rng).unwrap();
    let field = snap.conditioned(&Domain::Target.camera().observe(&s)).unwrap();
    let same = GuidanceSettings::default().resolve(pos, pos);
    ok &= denoise(&field, &same, 3).unwrap() == denoise(&field, &GuidanceConfig::plain(pos, 10), 3).unwrap();
    verdict(ok, "w=1 -> positive, w=0 -> negative, equal prompts -> plain, all bitwise".into())
}

// 2. Gradient of the regularized loss against central differences.

fn criterion_2() -> Verdict {
    let cfg = PolicyConfig::default();
    let mut pre = PolicySnapshot::new(cfg.clone(), 1).unwrap();
    pre.freeze_encoder_reference();
    let mut s = prepare_posttrain(&TrainConfig::for_mode(TrainMode::Delock, 1), &pre).unwrap();
    let mut rng = rng_from_seed(2);
    for b in s.blocks_mut() {
        b.trainable = true;
        let noise = normal_vec(&mut rng, b.len());
        b.values.iter_mut().zip(noise).for_each(|(v, e)| *v += 0.05 * e);
    }
    let mut batch_rng = rng_from_seed(3);
    let batch: Vec<_> = (0..2)
        .map(|i| lockin::policy::FlowSample {
            obs: normal_vec(&mut batch_rng, lockin::policy::OBS_WIDTH),
            prompt: Prompt::parse(if i == 0 { "put/green/-" } else { "put/-/left" }).unwrap(),
            chunk: lockin::policy::ActionChunk::from_flat(cfg.horizon, normal_vec(&mut batch_rng, cfg.chunk_width()))
                .unwrap(),
        })
        .collect();
    let noise = draw_noise(&batch, &mut batch_rng);
    let lambda = 0.5;
    s.zero_grads();
    delock_loss(&mut s, &batch, &noise, lambda, true).unwrap();
    let analytic: Vec<Vec<f64>> = s.blocks().iter().map(|b| b.grad.clone()).collect();
    let params: usize = analytic.iter().map(Vec::len).sum();
    let numeric = finite_diff_grad(
        &mut s,
        |m| m.blocks_mut(),
        |m| Ok(delock_loss(m, &batch, &noise, lambda, false)?.total),
        1e-5,
    )
    .unwrap();
    let err = max_rel_error(&analytic, &numeric, 1e-6);
    verdict(err < 1e-3, format!("max relative error {err:.2e} over {params} parameters (bound 1e-3)"))
}

// 3. Euler integration oracle.

/// Decay toward zero along the sampling direction, `da/ds = -a`.
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

fn criterion_3() -> Verdict {
    let p = Prompt::parse("put/green/-").unwrap();
    let seed = 17;
    let eps = initial_noise(30, seed);
    let out = denoise(&Decay, &GuidanceConfig::plain(p, 10), seed).unwrap();
    let geo = out
        .actions
        .iter()
        .zip(&eps)
        .map(|(o, e)| (o - e * 0.9f64.powi(10)).abs())
        .fold(0.0, f64::max);
    let err = |n: usize| {
        denoise(&Decay, &GuidanceConfig::plain(p, n), seed)
            .unwrap()
            .actions
            .iter()
            .zip(&eps)
            .map(|(o, e)| (o - e * (-1.0f64).exp()).abs())
            .fold(0.0, f64::max)
    };
    let ratios: Vec<f64> = [10, 20, 40].iter().map(|&n| err(n) / err(2 * n)).collect();
    let ok = geo <= 1e-12 && ratios.iter().all(|r| (1.7..=2.3).contains(r));
    verdict(
        ok,
        format!("max |out - eps*0.9^10| = {geo:.1e}; error ratios on halving {ratios:.3?}"),
    )
}

// 4. Freeze and interpolation contracts.

fn criterion_4() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::preset("smoke").unwrap();
    c.out_dir = tmp.path().to_path_buf();
    let mut exp = Experiment::open(c).unwrap();
    let pre = exp.pretrained().unwrap();
    let samples = exp.narrow_data().unwrap().windowed_samples(1).unwrap();
    let frozen = posttrain(&TrainConfig::for_mode(TrainMode::FrozenVis, 0), &pre, &samples).unwrap().snapshot;
    let bits = |s: &PolicySnapshot| -> Vec<Vec<u64>> {
        s.encoder.blocks().iter().map(|b| b.values.iter().map(|v| v.to_bits()).collect()).collect()
    };
    let mut ok = bits(&frozen) == bits(&pre) && encoder_drift_sq(&frozen).unwrap() == 0.0;
    let ft = posttrain(&TrainConfig::for_mode(TrainMode::FullFt, 0), &pre, &samples).unwrap().snapshot;
    let all = |s: &PolicySnapshot| -> Vec<Vec<u64>> {
        s.blocks().iter().map(|b| b.values.iter().map(|v| v.to_bits()).collect()).collect()
    };
    ok &= all(&ft) != all(&pre);
    ok &= all(&retain_interpolate(&ft, &pre, 1.0).unwrap()) == all(&ft);
    ok &= all(&retain_interpolate(&ft, &pre, 0.0).unwrap()) == all(&pre);
    verdict(ok, "frozen encoder bitwise unchanged; interpolation endpoints bitwise equal to inputs".into())
}

// 5. Determinism of the whole pipeline.

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn criterion_5() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut c = ExperimentConfig::default();
    c.data.broad_episodes = 200;
    c.data.narrow_per_task = 10;
    c.pretrain.steps = 1000;
    c.posttrain.steps = 500;
    c.seeds = vec![0, 1];
    c.trials = 5;
    c.methods = Method::ALL.to_vec();
    c.out_dir = a.path().to_path_buf();
    let mut c2 = c.clone();
    c2.out_dir = b.path().to_path_buf();
    Experiment::open(c).unwrap().run_matrix().unwrap();
    Experiment::open(c2).unwrap().run_matrix().unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let ckpts = ta.keys().filter(|k| k.ends_with(".ckpt")).count();
    let differing: Vec<&String> = ta.keys().filter(|k| tb.get(*k) != ta.get(*k)).collect();
    let ok = ta.len() == tb.len() && differing.is_empty() && ckpts > 0;
    verdict(
        ok,
        format!("{} files ({ckpts} checkpoints) compared across two runs; {} differ", ta.len(), differing.len()),
    )
}

// 6-10. The shared statistical experiment.

struct Shared {
    cells: Vec<CellReport>,
    /// Seed-indexed encoder drift per penalty weight; 0 is the unregularized path.
    drift: Vec<(f64, Vec<f64>)>,
    frozen_drift: Vec<f64>,
    secs: f64,
}

impl Shared {
    fn rate(&self, m: Method, t: TaskId, c: Condition, seed: Option<u64>) -> f64 {
        let (mut s, mut n) = (0, 0);
        for cell in self
            .cells
            .iter()
            .filter(|x| (x.method, x.task, x.condition) == (m, t, c) && seed.is_none_or(|s| s == x.seed))
        {
            s += cell.successes;
            n += cell.trials;
        }
        assert!(n > 0, "no cell for {m:?} {t} {c:?}");
        s as f64 / n as f64
    }
}

fn shared() -> Shared {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::default();
    c.out_dir = tmp.path().to_path_buf();
    c.seeds = SEEDS.to_vec();
    c.trials = TRIALS;
    c.tasks = vec![TaskId::TA, TaskId::TC];
    c.conditions = vec![Condition::Trained, Condition::Novel, Condition::InvalidPositive];
    let base = c.guidance;
    let mut exp = Experiment::open(c).unwrap();
    exp.pretrained().unwrap();
    let mut cells = Vec::new();
    let mut drift: Vec<(f64, Vec<f64>)> = std::iter::once(0.0).chain(DRIFT_LAMBDAS).map(|l| (l, Vec::new())).collect();
    let mut frozen_drift = Vec::new();
    for seed in SEEDS {
        for m in [Method::Sft, Method::DelockNoCpg, Method::FrozenVis, Method::Delock] {
            let (_, snap) = exp.method_snapshot(m, seed).unwrap();
            cells.extend(exp.eval_cells(m, seed, &snap, m.guidance(&base)));
            if m == Method::FrozenVis {
                frozen_drift.push(drift_report(&snap, seed).unwrap().param_l2_sq);
            }
        }
        for (lambda, out) in drift.iter_mut() {
            let cfg = if *lambda == 0.0 {
                TrainConfig::for_mode(TrainMode::NoVisReg, seed)
            } else {
                TrainConfig {
                    lambda: *lambda,
                    ..exp.config.train_config(Method::Delock, seed)
                }
            };
            let snap = exp.posttrained(&cfg).unwrap();
            out.push(encoder_drift_sq(&snap).unwrap().sqrt());
        }
        eprintln!("shared experiment: seed {seed} done after {:.0}s", start.elapsed().as_secs_f64());
    }
    Shared {
        cells,
        drift,
        frozen_drift,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn criterion_6(s: &Shared) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for t in [TaskId::TA, TaskId::TC] {
        let id = s.rate(Method::Sft, t, Condition::Trained, None);
        let novel = s.rate(Method::Sft, t, Condition::Novel, None);
        ok &= id >= 0.8 && novel <= 0.35;
        parts.push(format!("{t} ID {} novel {}", pct(id), pct(novel)));
    }
    verdict(ok, format!("{} (need ID >= 80%, novel <= 35%)", parts.join(", ")))
}

fn criterion_7(s: &Shared) -> Verdict {
    let mut good = 0;
    let mut rows = Vec::new();
    for seed in SEEDS {
        let mut seed_ok = true;
        let mut cells = Vec::new();
        for t in [TaskId::TA, TaskId::TC] {
            let gain = s.rate(Method::Delock, t, Condition::Novel, Some(seed)) - s.rate(Method::Sft, t, Condition::Novel, Some(seed));
            let id = s.rate(Method::Delock, t, Condition::Trained, Some(seed));
            seed_ok &= gain >= 0.25 && id >= 0.8;
            cells.push(format!("{t} gain {:+.0} ID {}", 100.0 * gain, pct(id)));
        }
        good += seed_ok as usize;
        rows.push(format!("seed {seed}: {}", cells.join(" ")));
    }
    verdict(
        good >= 4,
        format!("{good}/5 seeds meet gain >= 25 points and ID >= 80% [{}]", rows.join("; ")),
    )
}

fn criterion_8(s: &Shared) -> Verdict {
    let t = TaskId::TC;
    let full = s.rate(Method::Delock, t, Condition::Novel, None);
    let frozen = s.rate(Method::FrozenVis, t, Condition::Novel, None);
    let plain = s.rate(Method::DelockNoCpg, t, Condition::Novel, None);
    verdict(
        full > frozen && plain <= 0.10,
        format!(
            "T-C novel: DeLock {}, w/ Frozen-Vis {}, DeLock w/o CPG {} (need DeLock > Frozen-Vis, w/o CPG <= 10%)",
            pct(full),
            pct(frozen),
            pct(plain)
        ),
    )
}

fn criterion_9(s: &Shared) -> Verdict {
    let means: Vec<(f64, f64)> = s
        .drift
        .iter()
        .map(|(l, v)| (*l, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let monotone = means.windows(2).all(|w| w[1].1 <= w[0].1);
    let frozen_zero = s.frozen_drift.iter().all(|&d| d == 0.0);
    let shown: Vec<String> = means.iter().map(|(l, d)| format!("lambda {l}: {d:.4}")).collect();
    verdict(
        monotone && frozen_zero,
        format!("mean drift norm {}; frozen encoder drift {:?}", shown.join(", "), s.frozen_drift),
    )
}

fn criterion_10(s: &Shared) -> Verdict {
    let t = TaskId::TC;
    let valid = s.rate(Method::Delock, t, Condition::Novel, None);
    let garbled = s.rate(Method::Delock, t, Condition::InvalidPositive, None);
    let ta_valid = s.rate(Method::Delock, TaskId::TA, Condition::Novel, None);
    let ta_garbled = s.rate(Method::Delock, TaskId::TA, Condition::InvalidPositive, None);
    verdict(
        valid - garbled >= 0.20,
        format!(
            "T-C novel with valid positive {} vs unknown spatial token {} (need a 20 point drop); T-A for reference {} vs {}",
            pct(valid),
            pct(garbled),
            pct(ta_valid),
            pct(ta_garbled)
        ),
    )
}

// 11. Runtime of the full matrix.

fn criterion_11() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = ExperimentConfig::default();
    c.out_dir = tmp.path().to_path_buf();
    let start = Instant::now();
    let r = Experiment::open(c).unwrap().run_matrix().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let ok = secs <= 3600.0 && r.failures.is_empty() && r.methods().len() == 5;
    println!("{}", r.table());
    verdict(
        ok,
        format!(
            "5 methods x 5 tasks, {} cells, {:.1} min on {cores} core(s) (budget 60 min)",
            r.cells.len(),
            secs / 60.0
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failed = Vec::new();
    let mut run = |n: u32, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        report(n, &v, start.elapsed().as_secs_f64());
        if !v.pass {
            failed.push(n);
        }
    };
    run(1, &criterion_1);
    run(2, &criterion_2);
    run(3, &criterion_3);
    run(4, &criterion_4);
    run(5, &criterion_5);
    let s = shared();
    println!("shared experiment for criteria 6-10 took {:.1} min", s.secs / 60.0);
    run(6, &|| criterion_6(&s));
    run(7, &|| criterion_7(&s));
    run(8, &|| criterion_8(&s));
    run(9, &|| criterion_9(&s));
    run(10, &|| criterion_10(&s));
    run(11, &criterion_11);
    if failed.is_empty() {
        println!("acceptance: all 11 criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
