//! World state and the fixed-step update.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fsm::{body_fsm_step, BodyFsm, BodyState, HeadFsm};
use super::geometry::{wrap_angle, OrientedBox, Vec2};
use super::map::MapGeometry;
use super::scenario::ScenarioConfig;
use super::DT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    EgoPedestrian,
    Pedestrian,
    Vehicle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Footprint {
    Circle { radius: f64 },
    Box { length: f64, width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub position: Vec2,
    /// World frame, CCW from +x.
    pub body_yaw: f64,
    /// Relative to the body.
    pub head_yaw: f64,
    pub speed: f64,
    pub kind: AgentKind,
    pub footprint: Footprint,
    pub height: f64,
}

impl AgentPose {
    /// Width of the agent as seen along a view direction.
    pub fn apparent_width(&self, view_dir: Vec2) -> f64 {
        match self.footprint {
            Footprint::Circle { radius } => 2.0 * radius,
            Footprint::Box { length, width } => {
                let side = view_dir.perp();
                let fwd = Vec2::from_angle(self.body_yaw);
                length * fwd.dot(side).abs() + width * fwd.perp().dot(side).abs()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ego {
    pub pose: AgentPose,
    pub head: HeadFsm,
    pub body: BodyFsm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pedestrian {
    pub id: u32,
    pub pose: AgentPose,
    /// Position on the walk graph; the agent walks at `anchor + offset`.
    pub anchor: Vec2,
    pub offset: Vec2,
    pub cruise: f64,
    /// Remaining walk-graph nodes, next first.
    pub route: VecDeque<usize>,
    /// Node most recently reached.
    pub last: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleKind {
    Car,
    Van,
    Motorbike,
    Bicycle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    pub lane: usize,
    /// Arc length of the vehicle center along its lane.
    pub s: f64,
    pub cruise: f64,
    pub vehicle_kind: VehicleKind,
    pub pose: AgentPose,
}

impl Vehicle {
    pub fn length(&self) -> f64 {
        match self.pose.footprint {
            Footprint::Box { length, .. } => length,
            Footprint::Circle { radius } => 2.0 * radius,
        }
    }

    pub fn oriented_box(&self) -> OrientedBox {
        let (length, width) = match self.pose.footprint {
            Footprint::Box { length, width } => (length, width),
            Footprint::Circle { radius } => (2.0 * radius, 2.0 * radius),
        };
        OrientedBox { center: self.pose.position, heading: self.pose.body_yaw, length, width }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub clear: bool,
    pub occupants: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// Episode clock as a step count; time is `step · DT`.
    pub step: u64,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub map: MapGeometry,
    pub ego: Ego,
    pub pedestrians: Vec<Pedestrian>,
    pub vehicles: Vec<Vehicle>,
    pub detector: DetectorState,
    pub path_rng: ChaCha8Rng,
    pub warnings: Vec<String>,
}

fn occupants(world: &WorldState) -> Vec<u32> {
    world
        .vehicles
        .iter()
        .filter(|v| {
            let b = v.oriented_box();
            world.map.detectors.iter().any(|d| b.intersects_rect(&d.area))
        })
        .map(|v| v.id)
        .collect()
}

/// True iff no vehicle footprint touches a detector area.
pub fn detector_clear(world: &WorldState) -> bool {
    occupants(world).is_empty()
}

fn approach(current: f64, target: f64, max_delta: f64) -> f64 {
    let d = wrap_angle(target - current);
    wrap_angle(current + d.clamp(-max_delta, max_delta))
}

fn walk_toward(from: Vec2, to: Vec2, step: f64) -> Vec2 {
    let d = to - from;
    let len = d.length();
    if len <= step {
        to
    } else {
        from + d * (step / len)
    }
}

impl WorldState {
    pub fn time(&self) -> f64 {
        self.step as f64 * DT
    }

    pub fn refresh_detector(&mut self) {
        let occupants = occupants(self);
        self.detector = DetectorState { clear: occupants.is_empty(), occupants };
    }

    /// Any pedestrian, the ego included, standing on the crosswalk.
    pub fn crosswalk_occupied(&self) -> bool {
        let cw = &self.map.crosswalk;
        cw.contains(self.ego.pose.position) || self.pedestrians.iter().any(|p| cw.contains(p.pose.position))
    }

    fn step_ego(&mut self, t: f64) {
        let cfg = &self.config.ego;
        let route = &self.map.ego_route;
        let ego = &mut self.ego;
        ego.body = body_fsm_step(ego.body.clone(), self.detector.clear, t);
        let before = ego.pose.position;
        let pose = &mut ego.pose;
        let stride = cfg.walk_speed * DT;
        let cross_yaw = wrap_angle(route.start_yaw - std::f64::consts::FRAC_PI_2);
        match ego.body.state {
            BodyState::Walk1 => pose.position = walk_toward(pose.position, route.curb_point, stride),
            BodyState::TurnRight => pose.body_yaw = approach(pose.body_yaw, cross_yaw, cfg.turn_rate * DT),
            BodyState::Walk2 => pose.position = walk_toward(pose.position, route.far_point, stride),
            BodyState::TurnLeft => pose.body_yaw = approach(pose.body_yaw, route.start_yaw, cfg.turn_rate * DT),
            BodyState::Walk3 => pose.position = pose.position + Vec2::from_angle(pose.body_yaw) * stride,
            BodyState::Look | BodyState::Rest | BodyState::End => {}
        }
        pose.speed = pose.position.distance(before) / DT;
        let target = ego.head.target(t).unwrap_or(0.0);
        let head = pose.head_yaw + (target - pose.head_yaw).clamp(-cfg.head_slew_rate * DT, cfg.head_slew_rate * DT);
        pose.head_yaw = head.clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    }

    fn step_pedestrians(&mut self) {
        let graph = &self.map.walk_graph;
        let cross = self.config.pedestrians.cross_probability;
        for p in &mut self.pedestrians {
            let start = p.anchor;
            let mut budget = p.cruise * DT;
            while budget > 0.0 {
                let Some(&next) = p.route.front() else {
                    let dest = graph.pick_destination(p.last, cross, &mut self.path_rng);
                    if dest == p.last {
                        break;
                    }
                    p.route = graph.route(p.last, dest).into_iter().skip(1).collect();
                    if p.route.is_empty() {
                        break;
                    }
                    continue;
                };
                let target = graph.nodes[next];
                let d = p.anchor.distance(target);
                if d <= budget {
                    p.anchor = target;
                    budget -= d;
                    p.last = next;
                    p.route.pop_front();
                } else {
                    p.anchor = walk_toward(p.anchor, target, budget);
                    budget = 0.0;
                }
            }
            let moved = p.anchor - start;
            p.pose.position = p.anchor + p.offset;
            p.pose.speed = moved.length() / DT;
            if moved.length() > 1e-12 {
                p.pose.body_yaw = moved.y.atan2(moved.x);
            }
        }
    }

    fn step_vehicles(&mut self) {
        let tc = &self.config.vehicles;
        let occupied = self.crosswalk_occupied();
        let snapshot: Vec<(usize, f64, f64)> = self.vehicles.iter().map(|v| (v.lane, v.s, v.length())).collect();
        for (i, v) in self.vehicles.iter_mut().enumerate() {
            let lane = &self.map.lanes[v.lane];
            let lane_len = lane.centerline.length();
            let half = v.length() / 2.0;
            let mut limit = v.s + v.cruise * DT;

            let leader = snapshot
                .iter()
                .enumerate()
                .filter(|&(j, &(l, _, _))| j != i && l == v.lane)
                .map(|(_, &(_, s, len))| ((s - v.s).rem_euclid(lane_len), len))
                .filter(|&(d, _)| d > 0.0)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((d, len)) = leader {
                limit = limit.min(v.s + d - len / 2.0 - half - tc.min_gap);
            }

            if occupied {
                let gap = lane.crosswalk_entry - (v.s + half);
                if gap >= tc.stop_margin - 1e-9 && gap - v.cruise * DT <= tc.braking_distance {
                    limit = limit.min(lane.crosswalk_entry - tc.stop_margin - half);
                }
            }

            let new_s = limit.max(v.s);
            v.pose.speed = (new_s - v.s) / DT;
            v.s = new_s.rem_euclid(lane_len);
            let (p, dir) = lane.centerline.sample(v.s);
            v.pose.position = p;
            v.pose.body_yaw = dir.y.atan2(dir.x);
        }
    }
}

/// Advances the world by one fixed step of `DT` seconds.
pub fn step_world(world: &mut WorldState) {
    let t = world.time();
    world.step_ego(t);
    world.step_pedestrians();
    world.step_vehicles();
    world.step += 1;
    world.refresh_detector();
}

#[cfg(test)]
mod tests {
    use super::super::scenario::{build_scenario, CountRange};
    use super::*;

    fn quiet_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.pedestrians.count = CountRange { min: 0, max: 0 };
        cfg.vehicles.count = CountRange { min: 0, max: 0 };
        cfg
    }

    fn place_vehicle(world: &mut WorldState, lane: usize, x_front_gap: f64) {
        // Vehicle center `x_front_gap` meters before the crosswalk entry.
        let s = world.map.lanes[lane].crosswalk_entry - x_front_gap;
        let (position, dir) = world.map.lanes[lane].centerline.sample(s);
        world.vehicles.push(Vehicle {
            id: 0,
            lane,
            s,
            cruise: 10.0,
            vehicle_kind: VehicleKind::Car,
            pose: AgentPose {
                position,
                body_yaw: dir.y.atan2(dir.x),
                head_yaw: 0.0,
                speed: 10.0,
                kind: AgentKind::Vehicle,
                footprint: Footprint::Box { length: 4.5, width: 1.8 },
                height: 1.5,
            },
        });
    }

    #[test]
    fn clock_advances_one_step() {
        let mut w = build_scenario(&ScenarioConfig::default(), 4).unwrap();
        assert_eq!(w.time(), 0.0);
        step_world(&mut w);
        assert_eq!(w.step, 1);
        assert_eq!(w.time(), 0.06);
    }

    #[test]
    fn detector_sees_vehicles_within_range() {
        for lane in 0..2 {
            let mut w = build_scenario(&quiet_config(), 1).unwrap();
            assert!(detector_clear(&w));
            place_vehicle(&mut w, lane, 10.0);
            assert!(!detector_clear(&w));
            w.vehicles.clear();
            place_vehicle(&mut w, lane, 30.0);
            assert!(detector_clear(&w));
        }
    }

    #[test]
    fn ego_holds_still_while_resting() {
        let mut w = build_scenario(&quiet_config(), 2).unwrap();
        while w.ego.body.state != BodyState::Rest {
            step_world(&mut w);
        }
        let p = w.ego.pose.position;
        step_world(&mut w);
        assert_eq!(w.ego.body.state, BodyState::Rest);
        assert_eq!(w.ego.pose.position, p);
    }

    #[test]
    fn vehicles_stop_for_an_occupied_crosswalk() {
        let mut w = build_scenario(&quiet_config(), 2).unwrap();
        w.ego.pose.position = Vec2::new(0.0, 0.0);
        w.ego.body.state = BodyState::Look;
        w.ego.body.entered_at = 0.0;
        w.detector.clear = false;
        place_vehicle(&mut w, 0, 8.0);
        let entry = w.map.lanes[0].crosswalk_entry;
        for _ in 0..50 {
            w.ego.pose.position = Vec2::new(0.0, 0.0);
            w.ego.body.state = BodyState::Look;
            step_world(&mut w);
            let front = w.vehicles[0].s + 2.25;
            assert!(front <= entry - 1.0 + 1e-9, "front {front} entry {entry}");
        }
        assert_eq!(w.vehicles[0].pose.speed, 0.0);
    }

    #[test]
    fn identical_states_step_identically() {
        let mut a = build_scenario(&ScenarioConfig::default(), 9).unwrap();
        for _ in 0..30 {
            step_world(&mut a);
        }
        let mut b = a.clone();
        step_world(&mut a);
        step_world(&mut b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
