//! Action chunks in the policy's normalized action space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-step action width: `(dx, dy, gripper)`.
pub const ACTION_DIM: usize = 3;
pub const DEFAULT_HORIZON: usize = 10;

/// `horizon × ACTION_DIM` actions, row-major. Translation entries are in units
/// of the world's per-step translation bound; the gripper command lies in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub horizon: usize,
    pub actions: Vec<f64>,
}

impl ActionChunk {
    pub fn zeros(horizon: usize) -> Self {
        ActionChunk {
            horizon,
            actions: vec![0.0; horizon * ACTION_DIM],
        }
    }

    pub fn from_flat(horizon: usize, actions: Vec<f64>) -> Result<Self> {
        if actions.len() != horizon * ACTION_DIM {
            return Err(Error::Shape(format!(
                "{} values cannot form a chunk of horizon {horizon}",
                actions.len()
            )));
        }
        Ok(ActionChunk { horizon, actions })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn step(&self, k: usize) -> [f64; ACTION_DIM] {
        let r = &self.actions[k * ACTION_DIM..(k + 1) * ACTION_DIM];
        [r[0], r[1], r[2]]
    }

    pub fn rows(&self) -> impl Iterator<Item = [f64; ACTION_DIM]> + '_ {
        (0..self.horizon).map(|k| self.step(k))
    }

    pub fn max_abs_diff(&self, other: &ActionChunk) -> f64 {
        self.actions
            .iter()
            .zip(&other.actions)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
