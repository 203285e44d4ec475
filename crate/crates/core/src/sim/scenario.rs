//! Scenario configuration and world construction.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fsm::{BodyDurations, BodyFsm, HeadFsm, HeadTiming};
use super::geometry::Vec2;
use super::map::{MapConfig, MapGeometry};
use super::world::{AgentKind, AgentPose, DetectorState, Ego, Footprint, Pedestrian, Vehicle, VehicleKind, WorldState};
use super::{stream, SimError, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub min: f64,
    pub max: f64,
}

impl Span {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

/// Inclusive integer range for agent counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

/// Body FSM timers. The two crossing walks are timed from path length and walk speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyTiming {
    pub turn_right: f64,
    pub look: f64,
    pub rest: f64,
    pub turn_left: f64,
    pub walk3: f64,
}

impl Default for BodyTiming {
    fn default() -> Self {
        Self { turn_right: 0.9, look: 1.2, rest: 0.6, turn_left: 0.9, walk3: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoConfig {
    pub walk_speed: f64,
    /// Body turn rate, rad/s.
    pub turn_rate: f64,
    /// Head slew rate, rad/s.
    pub head_slew_rate: f64,
    pub height: f64,
    pub radius: f64,
}

impl Default for EgoConfig {
    fn default() -> Self {
        Self { walk_speed: 1.4, turn_rate: PI, head_slew_rate: 2.0 * PI, height: 1.75, radius: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrowdConfig {
    pub count: CountRange,
    pub speed: Span,
    pub height: Span,
    pub radius: f64,
    /// Bound on the fixed lateral offset of each pedestrian from the walk graph.
    pub max_offset: f64,
    /// Chance that a new destination lies across the road.
    pub cross_probability: f64,
}

impl Default for CrowdConfig {
    fn default() -> Self {
        Self { count: CountRange { min: 0, max: 50 }, speed: Span::new(1.0, 1.8), height: Span::new(1.1, 1.9), radius: 0.3, max_offset: 1.2, cross_probability: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficConfig {
    pub count: CountRange,
    pub speed: Span,
    /// Vehicles closer than this to an occupied crosswalk stop before it.
    pub braking_distance: f64,
    /// Stop line distance before the crosswalk edge.
    pub stop_margin: f64,
    /// Bumper-to-bumper gap kept behind the leader.
    pub min_gap: f64,
    pub slot_spacing: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self { count: CountRange { min: 0, max: 20 }, speed: Span::new(8.0, 14.0), braking_distance: 12.0, stop_margin: 1.0, min_gap: 2.0, slot_spacing: 12.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub map: MapConfig,
    pub head: HeadTiming,
    pub body: BodyTiming,
    pub ego: EgoConfig,
    pub pedestrians: CrowdConfig,
    pub vehicles: TrafficConfig,
    /// Seconds recorded after the ego reaches the end state.
    pub tail_seconds: f64,
    pub max_steps: u32,
    pub seed: Option<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            map: MapConfig::default(),
            head: HeadTiming::default(),
            body: BodyTiming::default(),
            ego: EgoConfig::default(),
            pedestrians: CrowdConfig::default(),
            vehicles: TrafficConfig::default(),
            tail_seconds: 28.2,
            max_steps: 4000,
            seed: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::Config(what.to_string()));
        if self.ego.walk_speed <= 0.0 || self.ego.turn_rate <= 0.0 || self.ego.head_slew_rate <= 0.0 {
            return bad("ego speeds must be positive");
        }
        for s in [self.pedestrians.speed, self.vehicles.speed, self.pedestrians.height] {
            if !(s.min > 0.0 && s.max >= s.min) {
                return bad("speed and height ranges need 0 < min <= max");
            }
        }
        if self.pedestrians.count.min > self.pedestrians.count.max || self.vehicles.count.min > self.vehicles.count.max {
            return bad("count range min exceeds max");
        }
        if self.tail_seconds < 0.0 || self.max_steps == 0 {
            return bad("tail must be non-negative and the step cap positive");
        }
        let b = &self.body;
        if [b.turn_right, b.look, b.rest, b.turn_left, b.walk3].iter().any(|&d| !(d >= 0.0)) {
            return bad("body durations must be non-negative");
        }
        Ok(())
    }
}

struct VehicleShape {
    kind: VehicleKind,
    length: f64,
    width: f64,
    height: f64,
}

const VEHICLE_SHAPES: [VehicleShape; 4] = [
    VehicleShape { kind: VehicleKind::Car, length: 4.5, width: 1.8, height: 1.5 },
    VehicleShape { kind: VehicleKind::Van, length: 5.2, width: 2.0, height: 2.2 },
    VehicleShape { kind: VehicleKind::Motorbike, length: 2.1, width: 0.8, height: 1.4 },
    VehicleShape { kind: VehicleKind::Bicycle, length: 1.8, width: 0.6, height: 1.7 },
];
/// Relative frequency of each vehicle type.
const VEHICLE_WEIGHTS: [u32; 4] = [6, 2, 1, 1];

fn draw_count(range: CountRange, rng: &mut impl Rng) -> usize {
    rng.gen_range(range.min..=range.max) as usize
}

pub fn build_scenario(config: &ScenarioConfig, seed: u64) -> Result<WorldState, SimError> {
    config.validate()?;
    let map = MapGeometry::crossing(&config.map)?;
    let mut warnings = Vec::new();
    let route = map.ego_route.clone();

    let durations = BodyDurations {
        walk1: route.start.distance(route.curb_point) / config.ego.walk_speed,
        turn_right: config.body.turn_right,
        look: config.body.look,
        walk2: route.curb_point.distance(route.far_point) / config.ego.walk_speed,
        rest: config.body.rest,
        turn_left: config.body.turn_left,
        walk3: config.body.walk3,
    };
    let ego = Ego {
        pose: AgentPose {
            position: route.start,
            body_yaw: route.start_yaw,
            head_yaw: 0.0,
            speed: 0.0,
            kind: AgentKind::EgoPedestrian,
            footprint: Footprint::Circle { radius: config.ego.radius },
            height: config.ego.height,
        },
        head: HeadFsm::from_timing(&config.head)?,
        body: BodyFsm::new(durations),
    };

    let mut spawn = stream(seed, Stream::Spawn);
    let ped_target = draw_count(config.pedestrians.count, &mut spawn);
    let veh_target = draw_count(config.vehicles.count, &mut spawn);

    let crowd = &config.pedestrians;
    let graph = &map.walk_graph;
    let mut slots = Vec::new();
    for &e in &graph.sidewalk_edges {
        let (a, b) = graph.edges[e];
        let len = graph.nodes[a].distance(graph.nodes[b]);
        let n = len.floor() as usize;
        for k in 0..n {
            slots.push((a, b, (k as f64 + 0.5) / len));
        }
    }
    slots.shuffle(&mut spawn);
    let mut pedestrians: Vec<Pedestrian> = Vec::with_capacity(ped_target);
    let clearance = crowd.radius + config.ego.radius + 0.1;
    for &(a, b, frac) in &slots {
        if pedestrians.len() == ped_target {
            break;
        }
        let anchor = graph.nodes[a] + (graph.nodes[b] - graph.nodes[a]) * frac;
        let offset = Vec2::new(spawn.gen_range(-crowd.max_offset..=crowd.max_offset), spawn.gen_range(-crowd.max_offset..=crowd.max_offset));
        let position = anchor + offset;
        let overlaps = position.distance(route.start) < clearance
            || pedestrians.iter().any(|p| p.pose.position.distance(position) < 2.0 * crowd.radius + 0.1);
        if overlaps || !map.on_sidewalk(position) {
            continue;
        }
        let toward = if spawn.gen_bool(0.5) { a } else { b };
        let dest = graph.pick_destination(toward, crowd.cross_probability, &mut spawn);
        let speed = crowd.speed.sample(&mut spawn);
        let height = crowd.height.sample(&mut spawn);
        let dir = graph.nodes[toward] - anchor;
        pedestrians.push(Pedestrian {
            id: pedestrians.len() as u32,
            pose: AgentPose {
                position,
                body_yaw: dir.y.atan2(dir.x),
                head_yaw: 0.0,
                speed,
                kind: AgentKind::Pedestrian,
                footprint: Footprint::Circle { radius: crowd.radius },
                height,
            },
            anchor,
            offset,
            cruise: speed,
            route: graph.route(toward, dest).into(),
            last: if toward == a { b } else { a },
        });
    }
    if pedestrians.len() < ped_target {
        let msg = format!("only {} of {} pedestrian spawn slots available", pedestrians.len(), ped_target);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut traffic = stream(seed, Stream::Vehicle);
    let tc = &config.vehicles;
    let mut vslots = Vec::new();
    for (li, lane) in map.lanes.iter().enumerate() {
        let n = (lane.centerline.length() / tc.slot_spacing).floor() as usize;
        vslots.extend((0..n).map(|k| (li, k as f64 * tc.slot_spacing)));
    }
    vslots.shuffle(&mut traffic);
    let total_weight: u32 = VEHICLE_WEIGHTS.iter().sum();
    let mut vehicles = Vec::with_capacity(veh_target);
    for &(lane, s) in vslots.iter().take(veh_target) {
        let mut pick = traffic.gen_range(0..total_weight);
        let shape = VEHICLE_SHAPES
            .iter()
            .zip(VEHICLE_WEIGHTS)
            .find(|(_, w)| {
                if pick < *w {
                    true
                } else {
                    pick -= w;
                    false
                }
            })
            .map(|(s, _)| s)
            .expect("weights cover the range");
        let cruise = tc.speed.sample(&mut traffic);
        let (position, dir) = map.lanes[lane].centerline.sample(s);
        vehicles.push(Vehicle {
            id: vehicles.len() as u32,
            lane,
            s,
            cruise,
            vehicle_kind: shape.kind,
            pose: AgentPose {
                position,
                body_yaw: dir.y.atan2(dir.x),
                head_yaw: 0.0,
                speed: cruise,
                kind: AgentKind::Vehicle,
                footprint: Footprint::Box { length: shape.length, width: shape.width },
                height: shape.height,
            },
        });
    }
    if vehicles.len() < veh_target {
        let msg = format!("only {} of {} vehicle spawn slots available", vehicles.len(), veh_target);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut world = WorldState {
        step: 0,
        seed,
        config: config.clone(),
        map,
        ego,
        pedestrians,
        vehicles,
        detector: DetectorState { clear: true, occupants: Vec::new() },
        path_rng: stream(seed, Stream::PedestrianPath),
        warnings,
    };
    world.refresh_detector();
    Ok(world)
}
