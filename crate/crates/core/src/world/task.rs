//! Paired-prompt lock-in probes: layouts, prompt resolution and success.

use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::state::{dist, ObjectState, WorldState, ZoneState};
use crate::error::{Error, Result};
use crate::policy::prompt::{concept, spatial, verb, Prompt, NULL};
use crate::rng::Rng;

/// Placement success radius around the destination center.
pub const SUCCESS_RADIUS: f64 = 0.05;
/// Consecutive closed-gripper steps on a handle that count as opening a door.
pub const OPEN_HOLD_STEPS: u32 = 3;
const MIN_SEPARATION: f64 = 0.15;

pub mod zone_kind {
    pub const PLATE: usize = 0;
    pub const DOOR_BANANA: usize = 1;
    pub const DOOR_APPLE: usize = 2;
}

pub mod object_class {
    pub const GREEN: usize = 0;
    pub const RED: usize = 1;
    pub const BLUE: usize = 2;
    pub const YELLOW: usize = 3;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "T-A")]
    TA,
    #[serde(rename = "T-B")]
    TB,
    #[serde(rename = "T-C")]
    TC,
    #[serde(rename = "T-D")]
    TD,
    #[serde(rename = "T-E")]
    TE,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [TaskId::TA, TaskId::TB, TaskId::TC, TaskId::TD, TaskId::TE];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskId::TA => "T-A",
            TaskId::TB => "T-B",
            TaskId::TC => "T-C",
            TaskId::TD => "T-D",
            TaskId::TE => "T-E",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown task `{s}`")))
    }

    pub fn index(&self) -> u64 {
        *self as u64
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeTag {
    #[serde(rename = "C")]
    Concept,
    #[serde(rename = "S")]
    Spatial,
    #[serde(rename = "C+S")]
    ConceptSpatial,
    #[serde(rename = "loc-only")]
    LocationOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuccessKind {
    /// Prompted object released within the radius of the destination zone.
    Place,
    /// Prompted block released on top of the other block.
    Stack,
    /// Prompted door handle held closed for several steps.
    Open,
}

/// Where layouts are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Post-training placement distribution.
    InDistribution,
    /// Disjoint shifted placement distribution (location-shift probe only).
    Shifted,
    /// Union of both, used for broad coverage.
    Broad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub name: String,
    pub probe: ProbeTag,
    pub kind: SuccessKind,
    pub train_prompts: Vec<Prompt>,
    pub novel_prompts: Vec<Prompt>,
    /// Whether a disjoint shifted layout region exists.
    pub has_shift: bool,
}

/// Source object slot and destination of a resolved prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Place { source: usize, zone: usize },
    Stack { source: usize, target: usize },
    Open { zone: usize },
}

fn object_class_of(concept_token: u16) -> Option<usize> {
    match concept_token {
        concept::GREEN => Some(object_class::GREEN),
        concept::RED => Some(object_class::RED),
        concept::BLUE => Some(object_class::BLUE),
        concept::YELLOW => Some(object_class::YELLOW),
        _ => None,
    }
}

fn door_of(concept_token: u16) -> Option<usize> {
    match concept_token {
        concept::BANANA => Some(zone_kind::DOOR_BANANA),
        concept::APPLE => Some(zone_kind::DOOR_APPLE),
        _ => None,
    }
}

/// The five desk-scale probes.
pub fn make_tasks() -> Vec<TaskSpec> {
    let put = |c, s| Prompt::new(verb::PUT, c, s);
    vec![
        TaskSpec {
            id: TaskId::TA,
            name: "mug-on-plate".into(),
            probe: ProbeTag::Concept,
            kind: SuccessKind::Place,
            train_prompts: vec![put(concept::GREEN, NULL)],
            novel_prompts: vec![put(concept::RED, NULL), put(concept::BLUE, NULL)],
            has_shift: false,
        },
        TaskSpec {
            id: TaskId::TB,
            name: "block-stacking".into(),
            probe: ProbeTag::Concept,
            kind: SuccessKind::Stack,
            train_prompts: vec![Prompt::new(verb::STACK, concept::BLUE, NULL)],
            novel_prompts: vec![Prompt::new(verb::STACK, concept::GREEN, NULL)],
            has_shift: false,
        },
        TaskSpec {
            id: TaskId::TC,
            name: "mug-on-sided-plate".into(),
            probe: ProbeTag::Spatial,
            kind: SuccessKind::Place,
            train_prompts: vec![put(NULL, spatial::LEFT)],
            novel_prompts: vec![put(NULL, spatial::RIGHT)],
            has_shift: false,
        },
        TaskSpec {
            id: TaskId::TD,
            name: "open-labeled-door".into(),
            probe: ProbeTag::ConceptSpatial,
            kind: SuccessKind::Open,
            train_prompts: vec![Prompt::new(verb::OPEN, concept::BANANA, NULL)],
            novel_prompts: vec![Prompt::new(verb::OPEN, concept::APPLE, NULL)],
            has_shift: false,
        },
        TaskSpec {
            id: TaskId::TE,
            name: "pot-on-stove".into(),
            probe: ProbeTag::LocationOnly,
            kind: SuccessKind::Place,
            train_prompts: vec![put(NULL, NULL)],
            novel_prompts: vec![],
            has_shift: true,
        },
    ]
}

pub fn task(id: TaskId) -> TaskSpec {
    make_tasks().into_iter().find(|t| t.id == id).expect("every id has a spec")
}

fn uniform(rng: &mut Rng, lo: [f64; 2], hi: [f64; 2]) -> [f64; 2] {
    [rng.random_range(lo[0]..hi[0]), rng.random_range(lo[1]..hi[1])]
}

/// x-range of the location-shift probe's object region.
pub fn shift_x_range(region: Region) -> (f64, f64) {
    match region {
        Region::InDistribution => (0.1, 0.45),
        Region::Shifted => (0.55, 0.9),
        Region::Broad => (0.1, 0.9),
    }
}

impl TaskSpec {
    pub fn all_prompts(&self) -> Vec<Prompt> {
        self.train_prompts.iter().chain(&self.novel_prompts).copied().collect()
    }

    fn draw_entities(&self, region: Region, rng: &mut Rng) -> (Vec<(usize, [f64; 2])>, Vec<(usize, [f64; 2])>) {
        match self.id {
            TaskId::TA => {
                let objects = [object_class::GREEN, object_class::RED, object_class::BLUE]
                    .into_iter()
                    .map(|c| (c, uniform(rng, [0.1, 0.1], [0.9, 0.6])))
                    .collect();
                (objects, vec![(zone_kind::PLATE, uniform(rng, [0.3, 0.75], [0.7, 0.9]))])
            }
            TaskId::TB => {
                let objects = [object_class::BLUE, object_class::GREEN]
                    .into_iter()
                    .map(|c| (c, uniform(rng, [0.1, 0.1], [0.9, 0.9])))
                    .collect();
                (objects, vec![])
            }
            TaskId::TC => (
                vec![(object_class::YELLOW, uniform(rng, [0.35, 0.1], [0.65, 0.4]))],
                vec![
                    (zone_kind::PLATE, uniform(rng, [0.1, 0.6], [0.35, 0.9])),
                    (zone_kind::PLATE, uniform(rng, [0.65, 0.6], [0.9, 0.9])),
                ],
            ),
            TaskId::TD => (
                vec![],
                vec![
                    (zone_kind::DOOR_BANANA, uniform(rng, [0.1, 0.6], [0.4, 0.9])),
                    (zone_kind::DOOR_APPLE, uniform(rng, [0.6, 0.6], [0.9, 0.9])),
                ],
            ),
            TaskId::TE => {
                let (x0, x1) = shift_x_range(region);
                let x = if region == Region::Broad {
                    // union of the two disjoint bands
                    if rng.random::<bool>() {
                        rng.random_range(0.1..0.45)
                    } else {
                        rng.random_range(0.55..0.9)
                    }
                } else {
                    rng.random_range(x0..x1)
                };
                (
                    vec![(object_class::YELLOW, [x, rng.random_range(0.1..0.5)])],
                    vec![(zone_kind::PLATE, uniform(rng, [0.4, 0.7], [0.6, 0.9]))],
                )
            }
        }
    }

    /// Samples an initial scene. Entities are kept at least 0.15 apart and
    /// assigned to random slots.
    pub fn sample_layout(&self, region: Region, rng: &mut Rng) -> Result<WorldState> {
        if region == Region::Shifted && !self.has_shift {
            return Err(Error::Config(format!("{} has no shifted layout region", self.id)));
        }
        let (objects, zones) = loop {
            let (o, z) = self.draw_entities(region, rng);
            let pts: Vec<[f64; 2]> = o.iter().chain(&z).map(|e| e.1).collect();
            let separated = pts
                .iter()
                .enumerate()
                .all(|(i, p)| pts[i + 1..].iter().all(|q| dist(*p, *q) >= MIN_SEPARATION));
            if separated {
                break (o, z);
            }
        };
        let mut state = WorldState::empty();
        // Objects sit in the slot of their class and zones are ordered left
        // to right, so a slot index carries a stable meaning across scenes.
        for (class, pos) in objects {
            state.objects[class] = ObjectState {
                pos,
                concept: class,
                present: true,
            };
        }
        let mut zones = zones;
        zones.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]));
        for (slot, (kind, pos)) in zones.into_iter().enumerate() {
            state.zones[slot] = ZoneState {
                pos,
                kind,
                present: true,
                engaged: 0,
            };
        }
        state.gripper_pos = [rng.random_range(0.45..0.55), rng.random_range(0.02..0.08)];
        Ok(state)
    }

    /// Maps a prompt onto concrete scene entities.
    pub fn resolve(&self, state: &WorldState, prompt: &Prompt) -> Result<Goal> {
        prompt.validate()?;
        let present_objects: Vec<usize> = (0..state.objects.len()).filter(|&i| state.objects[i].present).collect();
        let find_object = |class: usize| {
            present_objects
                .iter()
                .copied()
                .find(|&i| state.objects[i].concept == class)
                .ok_or_else(|| Error::Resolution(format!("no object matches `{prompt}`")))
        };
        let source = || -> Result<usize> {
            if prompt.concept == NULL {
                match present_objects.as_slice() {
                    [only] => Ok(*only),
                    _ => Err(Error::Resolution(format!("`{prompt}` names no object in a multi-object scene"))),
                }
            } else {
                let class =
                    object_class_of(prompt.concept).ok_or_else(|| Error::Resolution(format!("`{prompt}` names no object class")))?;
                find_object(class)
            }
        };
        let plates: Vec<usize> = (0..state.zones.len())
            .filter(|&z| state.zones[z].present && state.zones[z].kind == zone_kind::PLATE)
            .collect();
        match (self.kind, prompt.verb) {
            (SuccessKind::Place, verb::PUT) => {
                let zone = match prompt.spatial {
                    NULL => match plates.as_slice() {
                        [only] => *only,
                        _ => return Err(Error::Resolution(format!("`{prompt}` needs a spatial qualifier"))),
                    },
                    spatial::LEFT | spatial::RIGHT => {
                        let by_x = |a: &usize, b: &usize| state.zones[*a].pos[0].total_cmp(&state.zones[*b].pos[0]);
                        let pick = if prompt.spatial == spatial::LEFT {
                            plates.iter().copied().min_by(by_x)
                        } else {
                            plates.iter().copied().max_by(by_x)
                        };
                        match (pick, plates.len()) {
                            (Some(z), n) if n >= 2 => z,
                            _ => return Err(Error::Resolution(format!("`{prompt}` needs two plates"))),
                        }
                    }
                    _ => return Err(Error::Resolution(format!("spatial token in `{prompt}` is not resolvable"))),
                };
                Ok(Goal::Place { source: source()?, zone })
            }
            (SuccessKind::Stack, verb::STACK) => {
                let source = source()?;
                match present_objects.iter().copied().filter(|&i| i != source).collect::<Vec<_>>().as_slice() {
                    [target] => Ok(Goal::Stack { source, target: *target }),
                    _ => Err(Error::Resolution(format!("`{prompt}` needs exactly one other block"))),
                }
            }
            (SuccessKind::Open, verb::OPEN) => {
                let kind = door_of(prompt.concept).ok_or_else(|| Error::Resolution(format!("`{prompt}` names no door label")))?;
                (0..state.zones.len())
                    .find(|&z| state.zones[z].present && state.zones[z].kind == kind)
                    .map(|zone| Goal::Open { zone })
                    .ok_or_else(|| Error::Resolution(format!("no door matches `{prompt}`")))
            }
            _ => Err(Error::Resolution(format!("verb of `{prompt}` does not fit task {}", self.id))),
        }
    }

    /// Whether `state` satisfies `prompt`. Completing the skill on a different
    /// object or zone than the prompted one is a failure.
    pub fn success(&self, state: &WorldState, prompt: &Prompt) -> bool {
        match self.resolve(state, prompt) {
            Ok(Goal::Place { source, zone }) => {
                state.held_slot != source as i32 && dist(state.objects[source].pos, state.zones[zone].pos) <= SUCCESS_RADIUS
            }
            Ok(Goal::Stack { source, target }) => {
                state.held_slot != source as i32
                    && dist(state.objects[source].pos, state.objects[target].pos) <= SUCCESS_RADIUS
            }
            Ok(Goal::Open { zone }) => state.zones[zone].engaged >= OPEN_HOLD_STEPS,
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn prompt_sets_are_disjoint() {
        for t in make_tasks() {
            for p in &t.train_prompts {
                assert!(!t.novel_prompts.contains(p), "{}", t.id);
            }
            for p in t.all_prompts() {
                assert!(!p.has_unknown());
            }
        }
    }

    #[test]
    fn sided_task_has_left_and_right_plates() {
        let t = task(TaskId::TC);
        let mut rng = rng_from_seed(0);
        for _ in 0..500 {
            let s = t.sample_layout(Region::InDistribution, &mut rng).unwrap();
            let xs: Vec<f64> = s.zones.iter().filter(|z| z.present).map(|z| z.pos[0]).collect();
            assert_eq!(xs.len(), 2);
            assert!(xs.iter().any(|&x| x < 0.5) && xs.iter().any(|&x| x > 0.5));
        }
    }

    #[test]
    fn shifted_region_is_disjoint() {
        let t = task(TaskId::TE);
        let mut rng = rng_from_seed(1);
        let (id0, id1) = shift_x_range(Region::InDistribution);
        let (sh0, sh1) = shift_x_range(Region::Shifted);
        for _ in 0..10_000 {
            let a = t.sample_layout(Region::InDistribution, &mut rng).unwrap();
            let b = t.sample_layout(Region::Shifted, &mut rng).unwrap();
            let xa = a.objects.iter().find(|o| o.present).unwrap().pos[0];
            let xb = b.objects.iter().find(|o| o.present).unwrap().pos[0];
            assert!((id0..id1).contains(&xa) && !(sh0..sh1).contains(&xa));
            assert!((sh0..sh1).contains(&xb) && !(id0..id1).contains(&xb));
        }
        assert!(task(TaskId::TA).sample_layout(Region::Shifted, &mut rng).is_err());
    }

    fn place_scene() -> (TaskSpec, WorldState) {
        let t = task(TaskId::TA);
        let mut s = WorldState::empty();
        for (slot, class, x) in [(0, object_class::GREEN, 0.2), (1, object_class::RED, 0.5), (3, object_class::BLUE, 0.8)] {
            s.objects[slot] = ObjectState {
                pos: [x, 0.3],
                concept: class,
                present: true,
            };
        }
        s.zones[1] = ZoneState {
            pos: [0.5, 0.8],
            kind: zone_kind::PLATE,
            present: true,
            engaged: 0,
        };
        (t, s)
    }

    #[test]
    fn placement_threshold_boundary() {
        let (t, mut s) = place_scene();
        let red = Prompt::new(verb::PUT, concept::RED, NULL);
        s.objects[1].pos = [0.5, 0.8];
        assert!(t.success(&s, &red));
        s.objects[1].pos = [0.5, 0.8 - 0.049];
        assert!(t.success(&s, &red));
        s.objects[1].pos = [0.5, 0.8 - 0.051];
        assert!(!t.success(&s, &red));
        s.objects[1].pos = [0.5, 0.8];
        s.held_slot = 1;
        assert!(!t.success(&s, &red));
    }

    #[test]
    fn wrong_object_placement_fails() {
        let (t, mut s) = place_scene();
        s.objects[0].pos = [0.5, 0.8];
        assert!(t.success(&s, &Prompt::new(verb::PUT, concept::GREEN, NULL)));
        assert!(!t.success(&s, &Prompt::new(verb::PUT, concept::RED, NULL)));
    }

    #[test]
    fn resolution_errors() {
        let (t, s) = place_scene();
        assert!(matches!(t.resolve(&s, &Prompt::new(verb::PUT, NULL, NULL)), Err(Error::Resolution(_))));
        assert!(matches!(t.resolve(&s, &Prompt::new(verb::PUT, concept::YELLOW, NULL)), Err(Error::Resolution(_))));
        let tc = task(TaskId::TC);
        let mut rng = rng_from_seed(4);
        let sc = tc.sample_layout(Region::InDistribution, &mut rng).unwrap();
        assert!(tc.resolve(&sc, &Prompt::new(verb::PUT, NULL, crate::policy::prompt::UNKNOWN)).is_err());
        let Goal::Place { zone: left, .. } = tc.resolve(&sc, &Prompt::new(verb::PUT, NULL, spatial::LEFT)).unwrap() else {
            panic!()
        };
        assert!(sc.zones[left].pos[0] < 0.5);
    }
}
