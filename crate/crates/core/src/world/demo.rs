//! Demonstration datasets generated by the scripted expert.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::camera::Domain;
use super::expert::{scripted_expert, EXPERT_JITTER};
use super::state::{Action, WorldState};
use super::task::{task, Region, TaskId, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{ActionChunk, FlowSample, Observation, Prompt, DEFAULT_HORIZON};
use crate::rng::{derive_seed, rng_from_seed};

pub const GENERATOR_VERSION: &str = "lockin-world/1";
/// Step budget for one demonstration or rollout.
pub const MAX_EPISODE_STEPS: usize = 120;
const MAX_ATTEMPTS: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coverage {
    /// Every prompt of every selected task, uniformly; layouts from all regions.
    Broad,
    /// Training prompts only, in-distribution layouts.
    Narrow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSpec {
    pub tasks: Vec<TaskId>,
    pub coverage: Coverage,
    pub episodes: usize,
    pub seed: u64,
    pub domain: Domain,
    pub horizon: usize,
    pub jitter: f64,
    /// Start the gripper anywhere in the workspace instead of the home pose.
    pub random_start: bool,
}

impl DemoSpec {
    pub fn broad(episodes: usize, seed: u64) -> Self {
        DemoSpec {
            tasks: TaskId::ALL.to_vec(),
            coverage: Coverage::Broad,
            episodes,
            seed,
            domain: Domain::Source,
            horizon: DEFAULT_HORIZON,
            jitter: EXPERT_JITTER,
            random_start: true,
        }
    }

    /// `per_task` training-prompt demonstrations for each task, recorded on
    /// the post-training robot. Prompts are narrow; gripper starts are not.
    pub fn narrow(per_task: usize, seed: u64) -> Self {
        DemoSpec {
            tasks: TaskId::ALL.to_vec(),
            coverage: Coverage::Narrow,
            episodes: per_task * TaskId::ALL.len(),
            seed,
            domain: Domain::Target,
            horizon: DEFAULT_HORIZON,
            jitter: EXPERT_JITTER,
            random_start: true,
        }
    }

    /// `(task, prompt, region)` cells episodes are spread over.
    pub fn cells(&self) -> Vec<(TaskId, Prompt, Region)> {
        let mut out = Vec::new();
        for &id in &self.tasks {
            let t = task(id);
            match self.coverage {
                Coverage::Broad => {
                    let region = if t.has_shift { Region::Broad } else { Region::InDistribution };
                    out.extend(t.all_prompts().into_iter().map(|p| (id, p, region)));
                }
                Coverage::Narrow => out.extend(t.train_prompts.iter().map(|&p| (id, p, Region::InDistribution))),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task: TaskId,
    pub prompt: Prompt,
    pub region: Region,
    pub layout_seed: u64,
    pub initial: WorldState,
    pub observations: Vec<Observation>,
    pub chunks: Vec<ActionChunk>,
    pub steps: usize,
    pub success: bool,
}

impl Episode {
    /// Executes the recorded chunks open-loop from the initial state and
    /// reports whether success is reached.
    pub fn replay(&self) -> bool {
        let t = task(self.task);
        let mut s = self.initial.clone();
        for chunk in &self.chunks {
            for a in chunk.rows() {
                s = s.step(Action::from_normalized(a)).0;
                if t.success(&s, &self.prompt) {
                    return true;
                }
            }
        }
        false
    }
}

/// Runs the expert from `initial`, re-planning a chunk every `horizon` steps.
pub fn expert_episode(
    spec: &TaskSpec,
    initial: WorldState,
    prompt: Prompt,
    domain: Domain,
    horizon: usize,
    jitter: f64,
    seed: u64,
) -> Result<(Vec<Observation>, Vec<ActionChunk>, usize, bool)> {
    let camera = domain.camera();
    let mut rng = rng_from_seed(seed);
    let mut s = initial;
    let (mut obs, mut chunks) = (Vec::new(), Vec::new());
    let mut steps = 0;
    while steps < MAX_EPISODE_STEPS {
        let chunk = scripted_expert(spec, &s, &prompt, horizon, jitter, &mut rng)?;
        obs.push(camera.observe(&s));
        let rows: Vec<_> = chunk.rows().collect();
        chunks.push(chunk);
        for a in rows {
            s = s.step(Action::from_normalized(a)).0;
            steps += 1;
            if spec.success(&s, &prompt) {
                return Ok((obs, chunks, steps, true));
            }
        }
    }
    Ok((obs, chunks, steps, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoManifest {
    pub generator_version: String,
    pub spec: DemoSpec,
    /// Expert failures that were discarded and resampled.
    pub discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSet {
    pub manifest: DemoManifest,
    pub episodes: Vec<Episode>,
}

/// Generates `spec.episodes` successful expert episodes. Cells are assigned
/// in equal shares (remainder spread by a seeded shuffle); failed episodes are
/// redrawn with a fresh layout.
pub fn gen_demoset(spec: &DemoSpec) -> Result<DemoSet> {
    if spec.episodes == 0 {
        return Err(Error::Config("demo set needs at least one episode".into()));
    }
    if spec.horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let cells = spec.cells();
    if cells.is_empty() {
        return Err(Error::Config("demo set selects no prompts".into()));
    }
    let mut order: Vec<usize> = (0..spec.episodes).map(|i| i % cells.len()).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(spec.seed, &[0])));
    let results: Vec<Result<(Episode, usize)>> = order
        .par_iter()
        .enumerate()
        .map(|(i, &c)| {
            let (id, prompt, region) = cells[c];
            let t = task(id);
            for attempt in 0..MAX_ATTEMPTS {
                let layout_seed = derive_seed(spec.seed, &[1, i as u64, attempt]);
                let mut rng = rng_from_seed(layout_seed);
                let mut initial = t.sample_layout(region, &mut rng)?;
                if spec.random_start {
                    initial.gripper_pos = [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)];
                }
                let (observations, chunks, steps, success) = expert_episode(
                    &t,
                    initial.clone(),
                    prompt,
                    spec.domain,
                    spec.horizon,
                    spec.jitter,
                    derive_seed(layout_seed, &[2]),
                )?;
                if success {
                    let ep = Episode {
                        task: id,
                        prompt,
                        region,
                        layout_seed,
                        initial,
                        observations,
                        chunks,
                        steps,
                        success,
                    };
                    return Ok((ep, attempt as usize));
                }
            }
            Err(Error::Validation(format!("expert failed {MAX_ATTEMPTS} times on {id} `{prompt}`")))
        })
        .collect();
    let mut episodes = Vec::with_capacity(spec.episodes);
    let mut discarded = 0;
    for r in results {
        let (ep, d) = r?;
        discarded += d;
        episodes.push(ep);
    }
    Ok(DemoSet {
        manifest: DemoManifest {
            generator_version: GENERATOR_VERSION.into(),
            spec: spec.clone(),
            discarded,
        },
        episodes,
    })
}

impl DemoSet {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// One `(observation, chunk, prompt)` sample per recorded chunk.
    pub fn flow_samples(&self) -> Vec<FlowSample> {
        self.episodes
            .iter()
            .flat_map(|ep| {
                ep.observations.iter().zip(&ep.chunks).map(move |(o, c)| FlowSample {
                    obs: o.features(),
                    prompt: ep.prompt,
                    chunk: c.clone(),
                })
            })
            .collect()
    }

    /// Samples from every `stride`-th step of each episode: the recorded
    /// actions are replayed from the initial state, and each window of
    /// `horizon` consecutive actions becomes one chunk. `stride = horizon`
    /// reproduces [`DemoSet::flow_samples`].
    pub fn windowed_samples(&self, stride: usize) -> Result<Vec<FlowSample>> {
        if stride == 0 {
            return Err(Error::Config("sample stride must be positive".into()));
        }
        let h = self.manifest.spec.horizon;
        let camera = self.manifest.spec.domain.camera();
        let mut out = Vec::new();
        for ep in &self.episodes {
            let actions: Vec<f64> = ep.chunks.iter().flat_map(|c| c.actions.iter().copied()).collect();
            let total = actions.len() / 3;
            let mut s = ep.initial.clone();
            for k in 0..ep.steps.min(total.saturating_sub(h) + 1) {
                if k % stride == 0 {
                    out.push(FlowSample {
                        obs: camera.observe(&s).features(),
                        prompt: ep.prompt,
                        chunk: ActionChunk::from_flat(h, actions[3 * k..3 * (k + h)].to_vec())?,
                    });
                }
                let a = [actions[3 * k], actions[3 * k + 1], actions[3 * k + 2]];
                s = s.step(Action::from_normalized(a)).0;
            }
        }
        Ok(out)
    }

    /// Episode count per `task prompt` key.
    pub fn prompt_histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for ep in &self.episodes {
            *h.entry(format!("{} {}", ep.task, ep.prompt)).or_insert(0) += 1;
        }
        h
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Initial layouts as `episode task prompt kind slot x y` rows.
    pub fn layout_table(&self) -> String {
        let mut out = String::from("episode\ttask\tprompt\tkind\tslot\tx\ty\n");
        for (i, ep) in self.episodes.iter().enumerate() {
            let mut row = |kind: String, slot: usize, p: [f64; 2]| {
                out.push_str(&format!("{i}\t{}\t{}\t{kind}\t{slot}\t{:.6}\t{:.6}\n", ep.task, ep.prompt, p[0], p[1]));
            };
            row("gripper".into(), 0, ep.initial.gripper_pos);
            for (k, o) in ep.initial.objects.iter().enumerate().filter(|(_, o)| o.present) {
                row(format!("object{}", o.concept), k, o.pos);
            }
            for (k, z) in ep.initial.zones.iter().enumerate().filter(|(_, z)| z.present) {
                row(format!("zone{}", z.kind), k, z.pos);
            }
        }
        out
    }
}
