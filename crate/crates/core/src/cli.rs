//! Command-line front end for the `lockin` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::analysis::{counterfactual_replay, drift_report, mean_prompt_sensitivity};
use crate::harness::run::{guidance_tag, value_key};
use crate::harness::{Condition, EvalReport, Experiment, ExperimentConfig, Method, TraceFile};
use crate::policy::Prompt;
use crate::sampler::{GuidanceConfig, GuidanceSettings};
use crate::trainer::encoder_drift_sq;
use crate::world::{task, TaskId};

#[derive(Debug, Parser)]
#[command(name = "lockin", version, about = "Train, evaluate and probe flow-matching policies on the synthetic manipulation world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Preset name (`default`, `smoke`) or path to a TOML config.
    #[arg(long, default_value = "default")]
    config: String,
    /// Run directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Trials per cell; overrides `trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated task ids, e.g. `T-A,T-C`.
    #[arg(long, value_delimiter = ',')]
    tasks: Option<Vec<String>>,
    /// Comma-separated conditions (trained, novel, loc_shift, invalid_positive).
    #[arg(long, value_delimiter = ',')]
    conditions: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct GuidanceFlags {
    /// Guidance scale.
    #[arg(long)]
    w: Option<f64>,
    /// Euler steps of the sampler.
    #[arg(long)]
    steps: Option<usize>,
    /// Negative prompt as `verb/concept/spatial`; defaults to the task's
    /// training prompt.
    #[arg(long)]
    neg_prompt: Option<String>,
    /// Sample with the positive prompt only.
    #[arg(long)]
    no_cpg: bool,
}

impl GuidanceFlags {
    fn apply(&self, mut g: GuidanceSettings) -> Result<GuidanceSettings> {
        if let Some(w) = self.w {
            g.w = w;
            g.cpg_enabled = true;
        }
        if let Some(n) = self.steps {
            g.num_steps = n;
        }
        if let Some(p) = &self.neg_prompt {
            g.negative_override = Some(Prompt::parse(p)?);
        }
        if self.no_cpg {
            g.cpg_enabled = false;
        }
        if !(g.w.is_finite() && g.w >= 0.0) {
            return Err(Error::Config(format!("guidance scale must be finite and non-negative, got {}", g.w)));
        }
        if g.num_steps == 0 {
            return Err(Error::Config("sampler steps must be positive".into()));
        }
        Ok(g)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the broad and narrow demonstration sets.
    GenData(Common),
    /// Pretrain the shared snapshot on broad data.
    Pretrain(Common),
    /// Post-train one method row from the pretrained snapshot.
    Posttrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
        /// Drift penalty weight for regularized rows.
        #[arg(long)]
        lambda: Option<f64>,
        /// Post-training steps.
        #[arg(long)]
        train_steps: Option<u64>,
    },
    /// Evaluate one method row.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
        #[command(flatten)]
        guidance: GuidanceFlags,
        /// Also record trial N of every cell to `traces/`.
        #[arg(long)]
        trace: Option<usize>,
    },
    /// Run the method matrix.
    Matrix {
        #[command(flatten)]
        common: Common,
        /// Comma-separated method rows.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Encoder drift and prompt sensitivity of one method row.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: String,
    },
    /// Re-denoise a recorded trace under other guidance settings.
    Replay {
        /// Trace JSON written by `eval --trace`.
        #[arg(long)]
        traj: PathBuf,
        #[command(flatten)]
        guidance: GuidanceFlags,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::resolve(&c.config)?;
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(s) = &c.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(t) = &c.tasks {
        cfg.tasks = t.iter().map(|s| TaskId::parse(s)).collect::<Result<_>>()?;
    }
    if let Some(cs) = &c.conditions {
        cfg.conditions = cs.iter().map(|s| Condition::parse(s)).collect::<Result<_>>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Exit code for an error category.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Resolution(_) => 3,
        Error::Io { .. } | Error::Format(_) => 4,
        Error::State(_) => 5,
        Error::Shape(_) | Error::Numeric(_) => 6,
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(c) => {
            let mut exp = Experiment::open(load_config(&c)?)?;
            let (broad, narrow) = exp.gen_data()?;
            println!("{:<8} {:>9} {:>10}", "set", "episodes", "discarded");
            println!("{:<8} {:>9} {:>10}", "broad", broad.len(), broad.manifest.discarded);
            println!("{:<8} {:>9} {:>10}", "narrow", narrow.len(), narrow.manifest.discarded);
            println!("written to {}", exp.dir.root.join("data").display());
        }
        Command::Pretrain(c) => {
            let mut exp = Experiment::open(load_config(&c)?)?;
            let s = exp.pretrained()?;
            println!("pretrained snapshot ({} steps): {}", exp.config.pretrain.steps, exp.dir.path(Experiment::PRETRAINED).display());
            println!("encoder drift {:.3e}", encoder_drift_sq(&s)?);
        }
        Command::Posttrain {
            common,
            method,
            lambda,
            train_steps,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(l) = lambda {
                cfg.posttrain.lambda = l;
            }
            if let Some(n) = train_steps {
                cfg.posttrain.steps = n;
            }
            cfg.validate()?;
            let method = Method::parse(&method)?;
            let mut exp = Experiment::open(cfg)?;
            println!("{:<16} {:>5} {:>14}  checkpoint", "method", "seed", "drift_l2_sq");
            for seed in exp.config.seeds.clone() {
                let (rel, s) = exp.method_snapshot(method, seed)?;
                println!("{:<16} {:>5} {:>14.4e}  {}", method.as_str(), seed, encoder_drift_sq(&s)?, rel);
            }
        }
        Command::Eval {
            common,
            method,
            guidance,
            trace,
        } => {
            let method = Method::parse(&method)?;
            let mut exp = Experiment::open(load_config(&common)?)?;
            let g = method.guidance(&guidance.apply(exp.config.guidance)?);
            let mut report = EvalReport::new(exp.config.digest());
            for seed in exp.config.seeds.clone() {
                for cell in exp.eval_method(method, seed, g)? {
                    report.push(cell)?;
                }
                if let Some(trial) = trace {
                    for &id in &exp.config.tasks.clone() {
                        for &c in exp.config.conditions.clone().iter().filter(|c| c.applies_to(&task(id))) {
                            let p = exp.write_trace(method, seed, id, c, trial, g)?;
                            println!("trace {}", p.display());
                        }
                    }
                }
            }
            let stem = format!("eval-{}-{}-{}", method.as_str(), guidance_tag(&g), scope_key(&exp.config));
            let (json, _) = exp.write_report(&stem, &report)?;
            print!("{}", report.table());
            println!("report {}", json.display());
        }
        Command::Matrix { common, methods } => {
            let mut cfg = load_config(&common)?;
            if let Some(ms) = methods {
                cfg.methods = ms.iter().map(|s| Method::parse(s)).collect::<Result<_>>()?;
            }
            cfg.validate()?;
            let mut exp = Experiment::open(cfg)?;
            let report = exp.run_matrix()?;
            print!("{}", report.table());
            println!("report {}", exp.dir.path("reports/matrix.json").display());
            if !report.failures.is_empty() {
                return Err(Error::State(format!("{} method rows failed", report.failures.len())));
            }
        }
        Command::Analyze { common, method } => {
            let method = Method::parse(&method)?;
            let mut exp = Experiment::open(load_config(&common)?)?;
            let (ta, tc) = (task(TaskId::TA), task(TaskId::TC));
            let mut rows = Vec::new();
            println!(
                "{:<16} {:>5} {:>12} {:>10} {:>12} {:>12}",
                "method", "seed", "drift_l2_sq", "feat_cos", "concept_sens", "spatial_sens"
            );
            for seed in exp.config.seeds.clone() {
                let (_, s) = exp.method_snapshot(method, seed)?;
                let d = drift_report(&s, seed)?;
                let concept = mean_prompt_sensitivity(&s, TaskId::TA, &ta.train_prompts[0], &ta.novel_prompts[0], seed)?;
                let spatial = mean_prompt_sensitivity(&s, TaskId::TC, &tc.train_prompts[0], &tc.novel_prompts[0], seed)?;
                println!(
                    "{:<16} {:>5} {:>12.4e} {:>10.6} {:>12.4e} {:>12.4e}",
                    method.as_str(),
                    seed,
                    d.param_l2_sq,
                    d.feature_cosine,
                    concept,
                    spatial
                );
                rows.push(serde_json::json!({
                    "method": method,
                    "seed": seed,
                    "drift": d,
                    "concept_sensitivity": concept,
                    "spatial_sensitivity": spatial,
                }));
            }
            let body = serde_json::json!({ "config_digest": exp.config.digest(), "rows": rows });
            let rel = format!("reports/analyze-{}-{}.json", method.as_str(), scope_key(&exp.config));
            let bytes = serde_json::to_vec_pretty(&body).map_err(|e| Error::Format(e.to_string()))?;
            exp.write_artifact(&rel, &bytes, &exp.config.digest(), &[])?;
            println!("report {}", exp.dir.path(&rel).display());
        }
        Command::Replay { traj, guidance } => replay(&traj, &guidance)?,
    }
    Ok(())
}

/// Short key of the seed, task and condition selection, so that runs over
/// different selections do not overwrite each other.
fn scope_key(cfg: &ExperimentConfig) -> String {
    value_key(&(&cfg.seeds, &cfg.tasks, &cfg.conditions, cfg.trials))
}

fn replay(path: &Path, flags: &GuidanceFlags) -> Result<()> {
    let trace = TraceFile::load(path)?;
    let root = path
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| Error::Config(format!("{} is not inside a run directory", path.display())))?;
    let ckpt = root.join(&trace.checkpoint);
    let snapshot = crate::policy::PolicySnapshot::from_checkpoint(&crate::nn::Checkpoint::load(&ckpt)?)?;
    let t = task(trace.task);
    let positive = trace.condition.positive(trace.goal);
    let on_settings = flags.apply(GuidanceSettings {
        cpg_enabled: true,
        ..trace.guidance
    })?;
    let on = on_settings.resolve(positive, t.train_prompts[0]);
    let off = GuidanceConfig::plain(positive, on.num_steps);
    let record = counterfactual_replay(&trace.trajectory, &snapshot, &on, &off)?;
    let matches = record
        .steps
        .iter()
        .zip(&trace.trajectory.steps)
        .filter(|(r, s)| r.on == s.chunk)
        .count();
    let out = path.with_extension(format!("replay-{}.tsv", guidance_tag(&on_settings)));
    std::fs::write(&out, record.to_tsv()).map_err(|e| Error::io(&out, e))?;
    println!("{:>10} {:>12} {:>10}", "world_step", "chunk_diff", "angle");
    for s in &record.steps {
        println!("{:>10} {:>12.4e} {:>10.4}", s.world_step, s.chunk_diff, s.first_step_angle);
    }
    println!(
        "replayed {} chunks; {} identical to the recorded ones; written to {}",
        record.steps.len(),
        matches,
        out.display()
    );
    Ok(())
}
