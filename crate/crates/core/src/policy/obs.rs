//! Slot-structured observations and their flat encoder input.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const OBJECT_SLOTS: usize = 4;
pub const ZONE_SLOTS: usize = 2;
/// Object appearance classes: green, red, blue, yellow.
pub const OBJECT_CONCEPTS: usize = 4;
/// Zone kinds: plate, banana-labeled door, apple-labeled door.
pub const ZONE_KINDS: usize = 3;

const OBJECT_WIDTH: usize = 1 + 2 + 4 + OBJECT_CONCEPTS + 1;
const ZONE_WIDTH: usize = 1 + 2 + 4 + ZONE_KINDS;
/// Length scale of the saturating offset features.
const NEAR_SCALE: f64 = 0.1;
/// Width of [`Observation::features`].
pub const OBS_WIDTH: usize = OBJECT_SLOTS * OBJECT_WIDTH + ZONE_SLOTS * ZONE_WIDTH + 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectObs {
    pub pos: [f64; 2],
    pub concept_onehot: [f64; OBJECT_CONCEPTS],
    pub present: bool,
}

impl ObjectObs {
    pub fn absent() -> Self {
        ObjectObs {
            pos: [0.0; 2],
            concept_onehot: [0.0; OBJECT_CONCEPTS],
            present: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneObs {
    pub pos: [f64; 2],
    pub zone_id: usize,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub object_slots: Vec<ObjectObs>,
    pub gripper_pos: [f64; 2],
    /// `-1` when nothing is held.
    pub held_slot: i32,
    pub target_zones: Vec<ZoneObs>,
}

impl Observation {
    pub fn validate(&self) -> Result<()> {
        if self.object_slots.len() != OBJECT_SLOTS || self.target_zones.len() != ZONE_SLOTS {
            return Err(Error::Validation(format!(
                "observation has {} object and {} zone slots, expected {OBJECT_SLOTS} and {ZONE_SLOTS}",
                self.object_slots.len(),
                self.target_zones.len()
            )));
        }
        for (i, s) in self.object_slots.iter().enumerate() {
            if !s.present && (s.pos != [0.0; 2] || s.concept_onehot.iter().any(|&c| c != 0.0)) {
                return Err(Error::Validation(format!("absent slot {i} is not all-zero")));
            }
            if s.present && s.concept_onehot.iter().filter(|&&c| c == 1.0).count() != 1 {
                return Err(Error::Validation(format!("slot {i} concept is not one-hot")));
            }
        }
        if self.held_slot != -1 {
            let ok = usize::try_from(self.held_slot)
                .ok()
                .and_then(|i| self.object_slots.get(i))
                .is_some_and(|s| s.present);
            if !ok {
                return Err(Error::Validation(format!("held slot {} is not a present object", self.held_slot)));
            }
        }
        for (i, z) in self.target_zones.iter().enumerate() {
            if z.present && z.zone_id >= ZONE_KINDS {
                return Err(Error::Validation(format!("zone {i} has unknown kind {}", z.zone_id)));
            }
        }
        Ok(())
    }

    /// Flat encoder input: per slot presence, absolute position, offset
    /// from the gripper (raw and squashed), class one-hot (and a held flag for objects),
    /// then the gripper position and a holding flag. Absent slots are zeros.
    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(OBS_WIDTH);
        let g = self.gripper_pos;
        for (i, s) in self.object_slots.iter().enumerate() {
            if s.present {
                out.push(1.0);
                out.extend(s.pos);
                out.extend(offsets(s.pos, g));
                out.extend(s.concept_onehot);
                out.push(if self.held_slot == i as i32 { 1.0 } else { 0.0 });
            } else {
                out.extend([0.0; OBJECT_WIDTH]);
            }
        }
        for z in &self.target_zones {
            if z.present {
                out.push(1.0);
                out.extend(z.pos);
                out.extend(offsets(z.pos, g));
                let mut kind = [0.0; ZONE_KINDS];
                kind[z.zone_id] = 1.0;
                out.extend(kind);
            } else {
                out.extend([0.0; ZONE_WIDTH]);
            }
        }
        out.extend([g[0], g[1], if self.held_slot >= 0 { 1.0 } else { 0.0 }]);
        debug_assert_eq!(out.len(), OBS_WIDTH);
        out
    }

    /// Short content digest for trace files.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.features() {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Raw offset of `p` from the gripper, then the same offset squashed through
/// `tanh` at `NEAR_SCALE` so nearby targets are resolved finely.
fn offsets(p: [f64; 2], g: [f64; 2]) -> [f64; 4] {
    let d = [p[0] - g[0], p[1] - g[1]];
    [d[0], d[1], (d[0] / NEAR_SCALE).tanh(), (d[1] / NEAR_SCALE).tanh()]
}
