//! Run directories, the artifact manifest, and the pipeline stages.
//!
//! A run directory holds `data/`, `ckpts/`, `reports/`, `traces/` and a
//! `manifest.json` mapping every artifact to its content digest, the key of
//! the settings that produced it, and the config digest of the run that
//! wrote it. Artifacts are reused only when both digest and key match.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Stage};
use super::eval::{eval_suite, run_trial, Condition, Evaluated};
use super::methods::Method;
use super::report::{CellReport, EvalReport, RowFailure};
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::policy::{PolicySnapshot, Prompt};
use crate::sampler::{GuidanceSettings, Trajectory};
use crate::trainer::{log_to_tsv, posttrain, pretrain, retain_interpolate, TrainConfig, TrainMode};
use crate::world::{gen_demoset, task, DemoSet, DemoSpec, Domain, TaskId};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Short digest of any serializable value.
pub fn value_key<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("value serializes");
    hex::encode(&Sha256::digest(&bytes)[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub sha256: String,
    pub bytes: u64,
    /// Digest of the settings the artifact depends on.
    pub key: String,
    pub config_digest: String,
    /// Run-relative paths of the artifacts it was built from.
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, Artifact>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub const SUBDIRS: [&'static str; 4] = ["data", "ckpts", "reports", "traces"];

    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in Self::SUBDIRS {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(RunDir { root })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_manifest(&self) -> Result<Manifest> {
        let p = self.path(MANIFEST_FILE);
        match std::fs::read(&p) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", p.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(Error::io(&p, e)),
        }
    }
}

/// A trace file: one recorded rollout plus what is needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub config_digest: String,
    pub method: Method,
    pub seed: u64,
    pub task: TaskId,
    pub condition: Condition,
    pub trial: usize,
    /// Run-relative path of the evaluated checkpoint.
    pub checkpoint: String,
    pub guidance: GuidanceSettings,
    pub goal: Prompt,
    pub trajectory: Trajectory,
}

impl TraceFile {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// Columnar rows, one per executed action: planning index, world step
    /// the chunk was planned at, observed gripper position, row in the
    /// chunk, and the normalized action.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("chunk\tworld_step\tobs_gx\tobs_gy\trow\tdx\tdy\tgrip\n");
        for (i, s) in self.trajectory.steps.iter().enumerate() {
            for (k, a) in s.chunk.rows().enumerate() {
                out.push_str(&format!(
                    "{i}\t{}\t{:.6}\t{:.6}\t{k}\t{:.6}\t{:.6}\t{:.6}\n",
                    s.world_step, s.obs.gripper_pos[0], s.obs.gripper_pos[1], a[0], a[1], a[2]
                ));
            }
        }
        out
    }
}

/// File-name fragment for a sampler setting.
pub fn guidance_tag(g: &GuidanceSettings) -> String {
    let g = g.canonical();
    if !g.cpg_enabled {
        return format!("plain-n{}", g.num_steps);
    }
    let mut tag = format!("w{}-n{}", g.w, g.num_steps);
    if let Some(p) = g.negative_override {
        tag.push_str(&format!("-neg-{}", p.to_string().replace('/', "_")));
    }
    tag
}

/// A configured experiment bound to its run directory.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dir: RunDir,
    manifest: Manifest,
    demos: HashMap<String, DemoSet>,
    snapshots: HashMap<String, PolicySnapshot>,
}

impl Experiment {
    /// Validates `config` and opens (creating if needed) `config.out_dir`.
    pub fn open(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dir = RunDir::create(&config.out_dir)?;
        let manifest = dir.load_manifest()?;
        Ok(Experiment {
            config,
            dir,
            manifest,
            demos: HashMap::new(),
            snapshots: HashMap::new(),
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn stage_enabled(&self, s: Stage) -> bool {
        self.config.stages.contains(&s)
    }

    /// Bytes of `rel` when the manifest vouches for them under `key`.
    fn reusable(&self, rel: &str, key: &str) -> Result<Option<Vec<u8>>> {
        let Some(a) = self.manifest.artifacts.get(rel) else {
            return Ok(None);
        };
        if a.key != key {
            return Ok(None);
        }
        let p = self.dir.path(rel);
        match std::fs::read(&p) {
            Ok(bytes) if sha256_hex(&bytes) == a.sha256 => Ok(Some(bytes)),
            Ok(_) => Ok(None),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&p, e)),
        }
    }

    /// Writes an artifact and records it in the manifest.
    pub fn write_artifact(&mut self, rel: &str, bytes: &[u8], key: &str, inputs: &[&str]) -> Result<()> {
        let p = self.dir.path(rel);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.manifest.artifacts.insert(
            rel.to_string(),
            Artifact {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                key: key.to_string(),
                config_digest: self.config.digest(),
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
            },
        );
        let mp = self.dir.path(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(&self.manifest).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&mp, json).map_err(|e| Error::io(&mp, e))
    }

    fn demos(&mut self, rel: &str, spec: DemoSpec) -> Result<DemoSet> {
        let key = value_key(&(crate::world::demo::GENERATOR_VERSION, &spec));
        if let Some(d) = self.demos.get(&key) {
            return Ok(d.clone());
        }
        let set = match self.reusable(rel, &key)? {
            Some(bytes) => DemoSet::from_bytes(&bytes)?,
            None => {
                if !self.stage_enabled(Stage::GenData) {
                    return Err(Error::State(format!("{rel} is missing and the gen_data stage is disabled")));
                }
                let set = gen_demoset(&spec)?;
                self.write_artifact(rel, &set.to_bytes()?, &key, &[])?;
                set
            }
        };
        self.demos.insert(key, set.clone());
        Ok(set)
    }

    pub fn broad_data(&mut self) -> Result<DemoSet> {
        let spec = self.config.data.broad_spec();
        self.demos("data/broad.json", spec)
    }

    pub fn narrow_data(&mut self) -> Result<DemoSet> {
        let spec = self.config.data.narrow_spec();
        self.demos("data/narrow.json", spec)
    }

    /// Generates (or verifies) both demonstration sets.
    pub fn gen_data(&mut self) -> Result<(DemoSet, DemoSet)> {
        Ok((self.broad_data()?, self.narrow_data()?))
    }

    fn load_snapshot(&mut self, rel: &str, key: &str) -> Result<Option<PolicySnapshot>> {
        if let Some(s) = self.snapshots.get(key) {
            return Ok(Some(s.clone()));
        }
        match self.reusable(rel, key)? {
            Some(bytes) => {
                let s = PolicySnapshot::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?;
                self.snapshots.insert(key.to_string(), s.clone());
                Ok(Some(s))
            }
            None => Ok(None),
        }
    }

    fn store_snapshot(&mut self, rel: &str, key: &str, s: &PolicySnapshot, seed: u64, step: u64, inputs: &[&str]) -> Result<()> {
        let mut extra = BTreeMap::new();
        extra.insert("config_digest".to_string(), self.config.digest());
        extra.insert("key".to_string(), key.to_string());
        let bytes = s.to_checkpoint(seed, step, extra)?.to_bytes()?;
        self.write_artifact(rel, &bytes, key, inputs)?;
        self.snapshots.insert(key.to_string(), s.clone());
        Ok(())
    }

    pub const PRETRAINED: &'static str = "ckpts/pretrained.ckpt";

    /// The shared pretrained snapshot, trained on first use.
    pub fn pretrained(&mut self) -> Result<PolicySnapshot> {
        let key = self.config.pretrain_digest();
        if let Some(s) = self.load_snapshot(Self::PRETRAINED, &key)? {
            return Ok(s);
        }
        if !self.stage_enabled(Stage::Pretrain) {
            return Err(Error::State(format!(
                "{} is missing and the pretrain stage is disabled",
                Self::PRETRAINED
            )));
        }
        let samples = self.broad_data()?.windowed_samples(self.config.data.window_stride)?;
        let out = pretrain(&self.config.pretrain, &self.config.policy, &samples)?;
        let log_key = key.clone();
        self.write_artifact("reports/pretrain_log.tsv", log_to_tsv(&out.log).as_bytes(), &log_key, &["data/broad.json"])?;
        let (seed, steps) = (self.config.pretrain.seed, self.config.pretrain.steps);
        self.store_snapshot(Self::PRETRAINED, &key, &out.snapshot, seed, steps, &["data/broad.json"])?;
        Ok(out.snapshot)
    }

    /// Key and run-relative path of the checkpoint for `cfg`.
    pub fn posttrain_artifact(&self, cfg: &TrainConfig) -> (String, String) {
        let key = value_key(&(self.config.pretrain_digest(), &self.config.data, cfg));
        let rel = format!("ckpts/{}-seed{}-{}.ckpt", cfg.mode.as_str(), cfg.seed, &key[..8]);
        (key, rel)
    }

    /// Post-trains from the shared pretrained snapshot with `cfg`, reusing
    /// a matching checkpoint when one exists.
    pub fn posttrained(&mut self, cfg: &TrainConfig) -> Result<PolicySnapshot> {
        let (key, rel) = self.posttrain_artifact(cfg);
        if let Some(s) = self.load_snapshot(&rel, &key)? {
            return Ok(s);
        }
        if !self.stage_enabled(Stage::Posttrain) {
            return Err(Error::State(format!("{rel} is missing and the posttrain stage is disabled")));
        }
        let pre = self.pretrained()?;
        let samples = self.narrow_data()?.windowed_samples(self.config.data.window_stride)?;
        let out = posttrain(cfg, &pre, &samples)?;
        let log_rel = rel.replace("ckpts/", "reports/").replace(".ckpt", ".log.tsv");
        self.write_artifact(&log_rel, log_to_tsv(&out.log).as_bytes(), &key, &[Self::PRETRAINED, "data/narrow.json"])?;
        self.store_snapshot(&rel, &key, &out.snapshot, cfg.seed, cfg.steps, &[Self::PRETRAINED, "data/narrow.json"])?;
        Ok(out.snapshot)
    }

    /// Run-relative checkpoint path and snapshot for a method row.
    pub fn method_snapshot(&mut self, method: Method, seed: u64) -> Result<(String, PolicySnapshot)> {
        let cfg = self.config.train_config(method, seed);
        let (key, rel) = self.posttrain_artifact(&cfg);
        if method != Method::Retain {
            let s = self.posttrained(&cfg)?;
            return Ok((rel, s));
        }
        debug_assert_eq!(cfg.mode, TrainMode::FullFt);
        let alpha = self.config.retain_alpha;
        let rkey = value_key(&(&key, alpha));
        let rrel = format!("ckpts/retain-seed{seed}-{}.ckpt", &rkey[..8]);
        if let Some(s) = self.load_snapshot(&rrel, &rkey)? {
            return Ok((rrel, s));
        }
        let ft = self.posttrained(&cfg)?;
        let pre = self.pretrained()?;
        let s = retain_interpolate(&ft, &pre, alpha)?;
        self.store_snapshot(&rrel, &rkey, &s, seed, cfg.steps, &[&rel, Self::PRETRAINED])?;
        Ok((rrel, s))
    }

    /// Evaluates `snapshot` on every configured (task, condition) cell that
    /// applies, with `seed` as the evaluation seed.
    pub fn eval_cells(&self, method: Method, seed: u64, snapshot: &PolicySnapshot, guidance: GuidanceSettings) -> Vec<CellReport> {
        let guidance = guidance.canonical();
        let what = Evaluated::Policy {
            snapshot,
            guidance,
            domain: Domain::Target,
        };
        let mut out = Vec::new();
        for &id in &self.config.tasks {
            let t = task(id);
            for &c in self.config.conditions.iter().filter(|c| c.applies_to(&t)) {
                let records = eval_suite(what, &t, c, self.config.trials, seed);
                out.push(CellReport::from_records(method, seed, id, c, guidance, records));
            }
        }
        out
    }

    /// Post-trains (or loads) and evaluates one method row for one seed.
    pub fn eval_method(&mut self, method: Method, seed: u64, guidance: GuidanceSettings) -> Result<Vec<CellReport>> {
        let (_, snap) = self.method_snapshot(method, seed)?;
        Ok(self.eval_cells(method, seed, &snap, guidance))
    }

    /// Writes an evaluation report as JSON plus its table.
    pub fn write_report(&mut self, stem: &str, report: &EvalReport) -> Result<(PathBuf, PathBuf)> {
        report.validate()?;
        let key = self.config.digest();
        let (json, txt) = (format!("reports/{stem}.json"), format!("reports/{stem}.txt"));
        self.write_artifact(&json, report.to_json()?.as_bytes(), &key, &[])?;
        self.write_artifact(&txt, report.table().as_bytes(), &key, &[])?;
        Ok((self.dir.path(&json), self.dir.path(&txt)))
    }

    /// Every configured method row over every seed. A row whose training
    /// fails is recorded as a failure; other rows still run.
    pub fn run_matrix(&mut self) -> Result<EvalReport> {
        let mut report = EvalReport::new(self.config.digest());
        if self.stage_enabled(Stage::Pretrain) || self.stage_enabled(Stage::Posttrain) {
            // Shared prerequisites fail the whole matrix, not one row.
            self.pretrained()?;
        }
        let base = self.config.guidance;
        for seed in self.config.seeds.clone() {
            for method in self.config.methods.clone() {
                match self.method_snapshot(method, seed) {
                    Ok((_, snap)) => {
                        if self.stage_enabled(Stage::Eval) {
                            for cell in self.eval_cells(method, seed, &snap, method.guidance(&base)) {
                                report.push(cell)?;
                            }
                        }
                    }
                    Err(e) => report.failures.push(RowFailure {
                        method,
                        seed,
                        error: e.to_string(),
                    }),
                }
            }
        }
        self.write_report("matrix", &report)?;
        Ok(report)
    }

    /// Records one rollout to `traces/` as JSON (for replay) and TSV (for
    /// plotting). Returns the JSON path.
    #[allow(clippy::too_many_arguments)]
    pub fn write_trace(
        &mut self,
        method: Method,
        seed: u64,
        id: TaskId,
        condition: Condition,
        trial: usize,
        guidance: GuidanceSettings,
    ) -> Result<PathBuf> {
        let guidance = guidance.canonical();
        let (checkpoint, snap) = self.method_snapshot(method, seed)?;
        let t = task(id);
        let what = Evaluated::Policy {
            snapshot: &snap,
            guidance,
            domain: Domain::Target,
        };
        let (goal, trajectory) = run_trial(what, &t, condition, seed, trial, false)?;
        let trace = TraceFile {
            config_digest: self.config.digest(),
            method,
            seed,
            task: id,
            condition,
            trial,
            checkpoint: checkpoint.clone(),
            guidance,
            goal,
            trajectory,
        };
        let stem = format!(
            "traces/{}-seed{seed}-{id}-{}-trial{trial}-{}",
            method.as_str(),
            condition.as_str(),
            guidance_tag(&guidance)
        );
        let key = value_key(&(&checkpoint, &guidance, id, condition, trial));
        let json = serde_json::to_vec(&trace).map_err(|e| Error::Format(e.to_string()))?;
        self.write_artifact(&format!("{stem}.json"), &json, &key, &[&checkpoint])?;
        self.write_artifact(&format!("{stem}.tsv"), trace.to_tsv().as_bytes(), &key, &[&checkpoint])?;
        Ok(self.dir.path(&format!("{stem}.json")))
    }

    /// Loads the checkpoint a trace refers to.
    pub fn trace_snapshot(&self, trace: &TraceFile) -> Result<PolicySnapshot> {
        let p = self.dir.path(&trace.checkpoint);
        PolicySnapshot::from_checkpoint(&Checkpoint::load(&p)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset("smoke").unwrap();
        c.out_dir = dir.to_path_buf();
        c.data.broad_episodes = 10;
        c.data.narrow_per_task = 1;
        c.pretrain.steps = 5;
        c.posttrain.steps = 5;
        c.trials = 1;
        c.tasks = vec![TaskId::TA];
        c.conditions = vec![Condition::Trained];
        c
    }

    #[test]
    fn artifacts_are_reused_only_under_matching_keys() {
        let tmp = tempfile::tempdir().unwrap();
        let mut e = Experiment::open(tiny(tmp.path())).unwrap();
        let a = e.pretrained().unwrap();
        let bytes = std::fs::read(e.dir.path(Experiment::PRETRAINED)).unwrap();
        let mut cfg = tiny(tmp.path());
        cfg.stages = vec![Stage::Eval];
        let mut e2 = Experiment::open(cfg.clone()).unwrap();
        let ck = |s: &PolicySnapshot| s.to_checkpoint(0, 0, BTreeMap::new()).unwrap().to_bytes().unwrap();
        assert_eq!(ck(&e2.pretrained().unwrap()), ck(&a));
        cfg.pretrain.steps = 6;
        let mut e3 = Experiment::open(cfg).unwrap();
        assert!(matches!(e3.pretrained(), Err(Error::State(_))));
        assert_eq!(std::fs::read(e.dir.path(Experiment::PRETRAINED)).unwrap(), bytes);
    }

    #[test]
    fn matrix_with_one_cell() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = tiny(tmp.path());
        c.methods = vec![Method::Delock];
        let mut e = Experiment::open(c).unwrap();
        let r = e.run_matrix().unwrap();
        assert_eq!(r.cells.len(), 1);
        assert!(r.failures.is_empty());
        assert!(e.dir.path("reports/matrix.json").exists());
        let m = e.dir.load_manifest().unwrap();
        for (rel, a) in &m.artifacts {
            assert_eq!(sha256_hex(&std::fs::read(e.dir.path(rel)).unwrap()), a.sha256, "{rel}");
        }
    }

    #[test]
    fn guidance_tags_collapse_plain_settings() {
        let plain = GuidanceSettings::plain();
        let unit = GuidanceSettings { w: 1.0, ..GuidanceSettings::default() };
        assert_eq!(guidance_tag(&plain), guidance_tag(&unit));
        assert_eq!(guidance_tag(&GuidanceSettings::default()), "w3-n10");
    }
}
