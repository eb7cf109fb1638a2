//! Synthetic tabletop world with paired-prompt lock-in probes, a scripted
//! expert and demonstration datasets.

pub mod camera;
pub mod demo;
pub mod expert;
pub mod state;
pub mod task;

pub use camera::{Camera, Domain};
pub use demo::{expert_episode, gen_demoset, Coverage, DemoSet, DemoSpec, Episode, MAX_EPISODE_STEPS};
pub use expert::{expert_action, scripted_expert, EXPERT_JITTER};
pub use state::{Action, WorldState};
pub use task::{make_tasks, task, Goal, ProbeTag, Region, SuccessKind, TaskId, TaskSpec};
