//! Harness contracts on small configurations: determinism, the method-row
//! degeneracies, and replay of recorded traces.

use std::collections::BTreeMap;
use std::path::Path;

use lockin::harness::analysis::counterfactual_replay;
use lockin::harness::{Condition, Experiment, ExperimentConfig, Method, TraceFile};
use lockin::policy::flow::draw_noise;
use lockin::rng::rng_from_seed;
use lockin::sampler::{GuidanceConfig, GuidanceSettings};
use lockin::trainer::{delock_loss, prepare_posttrain, TrainConfig, TrainMode};
use lockin::world::{task, TaskId};

fn smoke(dir: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset("smoke").unwrap();
    c.out_dir = dir.to_path_buf();
    c
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn same_config_same_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = smoke(a.path());
    ca.methods = vec![Method::Retain, Method::Delock];
    let mut cb = ca.clone();
    cb.out_dir = b.path().to_path_buf();
    let ra = Experiment::open(ca).unwrap().run_matrix().unwrap();
    let rb = Experiment::open(cb).unwrap().run_matrix().unwrap();
    assert_eq!(ra, rb);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
    for (k, v) in &ta {
        assert!(v == &tb[k], "{k} differs");
    }
}

#[test]
fn guided_row_at_unit_scale_matches_unguided_row() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = smoke(tmp.path());
    c.guidance.w = 1.0;
    c.methods = vec![Method::Delock, Method::DelockNoCpg];
    let r = Experiment::open(c).unwrap().run_matrix().unwrap();
    let (with, without): (Vec<_>, Vec<_>) = r.cells.iter().partition(|c| c.method == Method::Delock);
    assert_eq!(with.len(), without.len());
    assert!(!with.is_empty());
    for (x, y) in with.iter().zip(&without) {
        assert_eq!((x.task, x.condition), (y.task, y.condition));
        assert_eq!(x.records, y.records);
    }
}

#[test]
fn zero_penalty_losses_match_unregularized_path() {
    let tmp = tempfile::tempdir().unwrap();
    let mut exp = Experiment::open(smoke(tmp.path())).unwrap();
    let pre = exp.pretrained().unwrap();
    let samples = exp.narrow_data().unwrap().windowed_samples(5).unwrap();
    let batch = &samples[..8];
    let noise = draw_noise(batch, &mut rng_from_seed(3));
    let mut reg = prepare_posttrain(&TrainConfig::for_mode(TrainMode::Delock, 1), &pre).unwrap();
    let mut free = prepare_posttrain(&TrainConfig::for_mode(TrainMode::NoVisReg, 1), &pre).unwrap();
    for s in [&mut reg, &mut free] {
        s.encoder.blocks_mut()[0].values[0] += 0.25;
    }
    let a = delock_loss(&mut reg, batch, &noise, 0.0, false).unwrap();
    let b = delock_loss(&mut free, batch, &noise, 0.0, false).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.penalty, 0.0);
    let c = delock_loss(&mut reg, batch, &noise, 0.1, false).unwrap();
    assert_eq!(c.bc, a.bc);
    assert!((c.penalty - 0.1 * 0.0625).abs() < 1e-15);
}

#[test]
fn recorded_trace_replays_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut exp = Experiment::open(smoke(tmp.path())).unwrap();
    let g = GuidanceSettings::default();
    let path = exp.write_trace(Method::Delock, 0, TaskId::TC, Condition::Novel, 1, g).unwrap();
    let trace = TraceFile::load(&path).unwrap();
    let snap = exp.trace_snapshot(&trace).unwrap();
    let t = task(TaskId::TC);
    let on = trace.guidance.resolve(trace.goal, t.train_prompts[0]);
    let off = GuidanceConfig::plain(trace.goal, on.num_steps);
    let r = counterfactual_replay(&trace.trajectory, &snap, &on, &off).unwrap();
    assert_eq!(r.steps.len(), trace.trajectory.steps.len());
    for (s, rec) in r.steps.iter().zip(&trace.trajectory.steps) {
        assert_eq!(s.on, rec.chunk);
    }
    assert!(r.max_chunk_diff() > 0.0);
    assert!(path.with_extension("tsv").exists());
}

#[test]
fn disabled_stages_with_missing_inputs_fail_their_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = smoke(tmp.path());
    c.stages = vec![lockin::harness::Stage::Eval];
    let r = Experiment::open(c).unwrap().run_matrix().unwrap();
    assert!(r.cells.is_empty());
    assert_eq!(r.failures.len(), Method::TABLE.len());
    assert!(r.failures.iter().all(|f| f.error.starts_with("state error") && f.error.contains("missing")));
}
