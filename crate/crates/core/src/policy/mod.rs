//! The factored flow-matching policy: observation encoder, prompt-conditioned
//! backbone and action expert that predicts a velocity over action chunks.

pub mod action;
pub mod flow;
pub mod obs;
pub mod prompt;
pub mod snapshot;

pub use action::{ActionChunk, ACTION_DIM, DEFAULT_HORIZON};
pub use flow::{flow_interpolate, flow_matching_loss, FlowSample, LossBreakdown};
pub use obs::{Observation, OBS_WIDTH};
pub use prompt::Prompt;
pub use snapshot::{Conditioned, PolicyConfig, PolicySnapshot, SnapshotMode};
