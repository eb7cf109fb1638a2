//! World state and the deterministic step function.

use serde::{Deserialize, Serialize};

use crate::policy::obs::{ObjectObs, Observation, ZoneObs, OBJECT_CONCEPTS, OBJECT_SLOTS, ZONE_SLOTS};

/// Per-axis translation bound for one step.
pub const MAX_DELTA: f64 = 0.05;
pub const GRASP_RADIUS: f64 = 0.03;
/// Radius within which a closed gripper engages a door handle.
pub const ENGAGE_RADIUS: f64 = 0.05;
/// A released object this close to a plate or another object rests on it.
pub const SETTLE_RADIUS: f64 = 0.08;
pub const GRIP_CLOSE: f64 = 0.5;
pub const GRIP_OPEN: f64 = -0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub pos: [f64; 2],
    /// Index into the object appearance classes (green, red, blue, yellow).
    pub concept: usize,
    pub present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneState {
    pub pos: [f64; 2],
    /// Zone kind: 0 plate, 1 banana door, 2 apple door.
    pub kind: usize,
    pub present: bool,
    /// Consecutive steps the closed gripper has held this zone's handle.
    pub engaged: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: Vec<ObjectState>,
    pub zones: Vec<ZoneState>,
    pub gripper_pos: [f64; 2],
    pub held_slot: i32,
    pub step: u64,
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Distance from `p` to the segment `a`..`b`.
pub fn segment_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// A physical action: translation in workspace units and gripper command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: [f64; 2],
    pub grip: f64,
}

impl Action {
    pub fn from_normalized(a: [f64; 3]) -> Self {
        Action {
            delta: [a[0] * MAX_DELTA, a[1] * MAX_DELTA],
            grip: a[2],
        }
    }

    pub fn to_normalized(self) -> [f64; 3] {
        [self.delta[0] / MAX_DELTA, self.delta[1] / MAX_DELTA, self.grip]
    }
}

impl WorldState {
    pub fn empty() -> Self {
        WorldState {
            objects: (0..OBJECT_SLOTS)
                .map(|_| ObjectState {
                    pos: [0.0; 2],
                    concept: 0,
                    present: false,
                })
                .collect(),
            zones: (0..ZONE_SLOTS)
                .map(|_| ZoneState {
                    pos: [0.0; 2],
                    kind: 0,
                    present: false,
                    engaged: 0,
                })
                .collect(),
            gripper_pos: [0.5, 0.05],
            held_slot: -1,
            step: 0,
        }
    }

    pub fn in_bounds(&self) -> bool {
        let ok = |p: [f64; 2]| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]);
        ok(self.gripper_pos) && self.objects.iter().filter(|o| o.present).all(|o| ok(o.pos))
    }

    /// Applies one action. Translation is clipped per axis to `MAX_DELTA` and
    /// the gripper to the unit square; then the gripper command is applied.
    ///
    /// Above `GRIP_CLOSE` an empty gripper grasps the nearest free object
    /// within `GRASP_RADIUS` of the swept segment of this step's motion, or
    /// failing that latches onto a door handle within `ENGAGE_RADIUS`. The
    /// gripper snaps to whatever it took hold of. A latched gripper does not
    /// translate and counts consecutive closed steps. Below `GRIP_OPEN` the
    /// gripper lets go; a released object that lands within `SETTLE_RADIUS`
    /// of a plate or another object comes to rest on it. Returns the new state
    /// and whether the action was clipped.
    pub fn step(&self, action: Action) -> (WorldState, bool) {
        let mut s = self.clone();
        let mut clipped = false;
        let latched = s.zones.iter().position(|z| z.engaged > 0);
        let start = s.gripper_pos;
        for (axis, d) in action.delta.iter().enumerate() {
            let d = if d.is_finite() { *d } else { 0.0 };
            let c = d.clamp(-MAX_DELTA, MAX_DELTA);
            clipped |= c != d;
            if latched.is_none() {
                s.gripper_pos[axis] = (s.gripper_pos[axis] + c).clamp(0.0, 1.0);
            }
        }
        if s.held_slot >= 0 {
            s.objects[s.held_slot as usize].pos = s.gripper_pos;
        }
        let grip = if action.grip.is_finite() { action.grip } else { 0.0 };
        if grip > GRIP_CLOSE {
            if let Some(z) = latched {
                s.zones[z].engaged += 1;
            } else if s.held_slot < 0 {
                let end = s.gripper_pos;
                let nearest = s
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.present)
                    .map(|(i, o)| (i, segment_dist(o.pos, start, end)))
                    .filter(|(_, d)| *d <= GRASP_RADIUS)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, _)) = nearest {
                    s.held_slot = i as i32;
                    s.gripper_pos = s.objects[i].pos;
                } else {
                    let handle = s
                        .zones
                        .iter()
                        .enumerate()
                        .filter(|(_, z)| z.present && z.kind > 0)
                        .map(|(i, z)| (i, segment_dist(z.pos, start, end)))
                        .filter(|(_, d)| *d <= ENGAGE_RADIUS)
                        .min_by(|a, b| a.1.total_cmp(&b.1));
                    if let Some((z, _)) = handle {
                        s.gripper_pos = s.zones[z].pos;
                        s.zones[z].engaged = 1;
                    }
                }
            }
        } else {
            if let Some(z) = latched {
                s.zones[z].engaged = 0;
            }
            if grip < GRIP_OPEN && s.held_slot >= 0 {
                let slot = s.held_slot as usize;
                s.held_slot = -1;
                s.settle(slot);
            }
        }
        s.step += 1;
        (s, clipped)
    }

    /// Moves a just-released object onto the nearest plate within
    /// `SETTLE_RADIUS`, else onto the nearest other object within it.
    fn settle(&mut self, slot: usize) {
        let pos = self.objects[slot].pos;
        let nearest = |it: &mut dyn Iterator<Item = [f64; 2]>| {
            it.map(|p| (p, dist(p, pos)))
                .filter(|(_, d)| *d <= SETTLE_RADIUS)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(p, _)| p)
        };
        let plate = nearest(&mut self.zones.iter().filter(|z| z.present && z.kind == 0).map(|z| z.pos));
        let target = plate.or_else(|| {
            nearest(
                &mut self
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(i, o)| *i != slot && o.present)
                    .map(|(_, o)| o.pos),
            )
        });
        if let Some(p) = target {
            self.objects[slot].pos = p;
        }
    }

    pub fn observe(&self) -> Observation {
        Observation {
            object_slots: self
                .objects
                .iter()
                .map(|o| {
                    if o.present {
                        let mut onehot = [0.0; OBJECT_CONCEPTS];
                        onehot[o.concept] = 1.0;
                        ObjectObs {
                            pos: o.pos,
                            concept_onehot: onehot,
                            present: true,
                        }
                    } else {
                        ObjectObs::absent()
                    }
                })
                .collect(),
            gripper_pos: self.gripper_pos,
            held_slot: self.held_slot,
            target_zones: self
                .zones
                .iter()
                .map(|z| ZoneObs {
                    pos: if z.present { z.pos } else { [0.0; 2] },
                    zone_id: if z.present { z.kind } else { 0 },
                    present: z.present,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> WorldState {
        let mut s = WorldState::empty();
        s.objects[1] = ObjectState {
            pos: [0.5, 0.5],
            concept: 2,
            present: true,
        };
        s.zones[0] = ZoneState {
            pos: [0.8, 0.8],
            kind: 0,
            present: true,
            engaged: 0,
        };
        s.gripper_pos = [0.2, 0.2];
        s
    }

    #[test]
    fn zero_action_only_advances_step() {
        let s = scene();
        let (n, clipped) = s.step(Action {
            delta: [0.0, 0.0],
            grip: 0.0,
        });
        assert!(!clipped);
        let mut expect = s.clone();
        expect.step = 1;
        assert_eq!(n, expect);
    }

    #[test]
    fn grasp_far_from_objects_is_noop() {
        let (n, _) = scene().step(Action {
            delta: [0.0, 0.0],
            grip: 1.0,
        });
        assert_eq!(n.held_slot, -1);
    }

    #[test]
    fn translation_is_clipped_to_bounds() {
        let mut s = scene();
        s.gripper_pos = [0.99, 0.01];
        let (n, clipped) = s.step(Action {
            delta: [0.3, -0.02],
            grip: 0.0,
        });
        assert!(clipped);
        assert_eq!(n.gripper_pos, [1.0, 0.0]);
        assert!(n.in_bounds());
    }

    #[test]
    fn reach_grasp_move_release() {
        let mut s = scene();
        let target = s.objects[1].pos;
        while dist(s.gripper_pos, target) > 1e-12 {
            let d = [target[0] - s.gripper_pos[0], target[1] - s.gripper_pos[1]];
            s = s.step(Action { delta: d, grip: -1.0 }).0;
        }
        s = s.step(Action { delta: [0.0, 0.0], grip: 1.0 }).0;
        assert_eq!(s.held_slot, 1);
        for _ in 0..4 {
            s = s.step(Action { delta: [0.05, 0.05], grip: 1.0 }).0;
        }
        s = s.step(Action { delta: [0.0, 0.0], grip: -1.0 }).0;
        assert_eq!(s.held_slot, -1);
        assert!(dist(s.objects[1].pos, [0.7, 0.7]) < 1e-12);
        assert!(s.in_bounds());
    }

    #[test]
    fn door_engagement_counts_consecutive_holds() {
        let mut s = WorldState::empty();
        s.zones[1] = ZoneState {
            pos: [0.3, 0.3],
            kind: 1,
            present: true,
            engaged: 0,
        };
        s.gripper_pos = [0.31, 0.3];
        let close = Action { delta: [0.0, 0.0], grip: 1.0 };
        s = s.step(close).0.step(close).0;
        assert_eq!(s.zones[1].engaged, 2);
        s = s.step(Action { delta: [0.0, 0.0], grip: 0.0 }).0;
        assert_eq!(s.zones[1].engaged, 0);
    }

    #[test]
    fn grasp_catches_object_passed_over() {
        let mut s = scene();
        s.gripper_pos = [0.46, 0.5];
        let (n, _) = s.step(Action { delta: [0.05, 0.0], grip: 1.0 });
        assert_eq!(n.held_slot, 1);
        assert_eq!(n.gripper_pos, [0.5, 0.5]);
    }

    #[test]
    fn latched_gripper_does_not_translate() {
        let mut s = WorldState::empty();
        s.zones[1] = ZoneState {
            pos: [0.3, 0.3],
            kind: 1,
            present: true,
            engaged: 0,
        };
        s.gripper_pos = [0.33, 0.3];
        let pull = Action { delta: [0.05, 0.0], grip: 1.0 };
        s = s.step(pull).0;
        assert_eq!(s.gripper_pos, [0.3, 0.3]);
        s = s.step(pull).0.step(pull).0;
        assert_eq!(s.zones[1].engaged, 3);
        assert_eq!(s.gripper_pos, [0.3, 0.3]);
        s = s.step(Action { delta: [0.05, 0.0], grip: -1.0 }).0;
        assert_eq!(s.zones[1].engaged, 0);
        s = s.step(Action { delta: [0.05, 0.0], grip: 0.0 }).0;
        assert!((s.gripper_pos[0] - 0.35).abs() < 1e-12);
    }

    #[test]
    fn release_near_plate_settles_on_it() {
        let mut s = scene();
        s.held_slot = 1;
        s.gripper_pos = [0.74, 0.78];
        let (n, _) = s.step(Action { delta: [0.0, 0.0], grip: -1.0 });
        assert_eq!(n.objects[1].pos, [0.8, 0.8]);
        s.gripper_pos = [0.7, 0.8];
        let (n, _) = s.step(Action { delta: [0.0, 0.0], grip: -1.0 });
        assert_eq!(n.objects[1].pos, [0.7, 0.8]);
    }

    proptest::proptest! {
        #[test]
        fn bounds_hold_under_any_actions(
            acts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -2.0f64..2.0), 1..60)
        ) {
            let mut s = scene();
            for (dx, dy, g) in acts {
                s = s.step(Action { delta: [dx, dy], grip: g }).0;
                proptest::prop_assert!(s.in_bounds());
                if s.held_slot >= 0 {
                    proptest::prop_assert_eq!(s.objects[s.held_slot as usize].pos, s.gripper_pos);
                }
            }
        }
    }
}
