//! Viewpoint of the observation. Pretraining data is recorded from the
//! reference viewpoint; the post-training robot sees the scene through a
//! rotated, rescaled and offset camera, so a pretrained policy has to adapt
//! its perception before it can act in the new setup.

use serde::{Deserialize, Serialize};

use super::state::WorldState;
use crate::policy::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Rotation about the workspace center, radians.
    pub angle: f64,
    pub scale: f64,
    pub offset: [f64; 2],
}

/// Which setup a dataset or evaluation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// Broad pretraining data, reference viewpoint.
    Source,
    /// Post-training and evaluation robot.
    Target,
}

impl Domain {
    pub fn camera(self) -> Camera {
        match self {
            Domain::Source => Camera::identity(),
            Domain::Target => Camera {
                angle: 0.15,
                scale: 0.95,
                offset: [0.03, -0.02],
            },
        }
    }
}

impl Camera {
    pub fn identity() -> Self {
        Camera {
            angle: 0.0,
            scale: 1.0,
            offset: [0.0, 0.0],
        }
    }

    pub fn project(&self, p: [f64; 2]) -> [f64; 2] {
        if *self == Camera::identity() {
            return p;
        }
        let (s, c) = self.angle.sin_cos();
        let (x, y) = (p[0] - 0.5, p[1] - 0.5);
        [
            0.5 + self.scale * (c * x - s * y) + self.offset[0],
            0.5 + self.scale * (s * x + c * y) + self.offset[1],
        ]
    }

    /// Observes `state` through this camera. Absent slots stay zeroed.
    pub fn observe(&self, state: &WorldState) -> Observation {
        let mut o = state.observe();
        o.gripper_pos = self.project(o.gripper_pos);
        for s in o.object_slots.iter_mut().filter(|s| s.present) {
            s.pos = self.project(s.pos);
        }
        for z in o.target_zones.iter_mut().filter(|z| z.present) {
            z.pos = self.project(z.pos);
        }
        o
    }
}
