//! The crossing map: a straight two-lane loop road with sidewalks, a crosswalk,
//! building facades, street poles and one vehicle detector per lane.

use serde::{Deserialize, Serialize};

use super::geometry::{Polygon, Polyline, Rect, Vec2};
use super::SimError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Road runs along x ∈ [−half_length, half_length]; lanes wrap around.
    pub road_half_length: f64,
    pub lane_width: f64,
    pub sidewalk_width: f64,
    /// Extent of the crosswalk along the road.
    pub crosswalk_width: f64,
    pub detector_length: f64,
    pub building_depth: f64,
    /// Walkable sidewalk graph covers x ∈ [−extent, extent].
    pub walk_extent: f64,
    pub walk_node_spacing: f64,
    /// Distance from the ego start to the point in front of the crosswalk.
    pub ego_start_distance: f64,
    /// Ego stops this far from the curb before turning toward the road.
    pub curb_clearance: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            road_half_length: 150.0,
            lane_width: 3.5,
            sidewalk_width: 4.0,
            crosswalk_width: 4.0,
            detector_length: 21.0,
            building_depth: 14.0,
            walk_extent: 60.0,
            walk_node_spacing: 10.0,
            ego_start_distance: 3.8,
            curb_clearance: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub footprint: Rect,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub position: Vec2,
    pub radius: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub centerline: Polyline,
    /// Arc length at which the lane enters the crosswalk.
    pub crosswalk_entry: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub lane: usize,
    pub area: Rect,
}

/// Undirected walk graph over sidewalk centerlines plus the crosswalk rung.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkGraph {
    pub nodes: Vec<Vec2>,
    pub edges: Vec<(usize, usize)>,
    /// Edges that lie on sidewalks (spawnable), as opposed to the crosswalk.
    pub sidewalk_edges: Vec<usize>,
}

impl WalkGraph {
    fn neighbours(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == n {
                Some(b)
            } else if b == n {
                Some(a)
            } else {
                None
            }
        })
    }

    /// Random destination for a walker at node `from`: a node on the opposite
    /// side of the road with probability `cross`, otherwise one on the same side.
    pub fn pick_destination(&self, from: usize, cross: f64, rng: &mut impl rand::Rng) -> usize {
        let side = self.nodes[from].y > 0.0;
        let other = rng.gen_bool(cross.clamp(0.0, 1.0));
        let pool: Vec<usize> = (0..self.nodes.len()).filter(|&n| n != from && ((self.nodes[n].y > 0.0) != side) == other).collect();
        if pool.is_empty() {
            return from;
        }
        pool[rng.gen_range(0..pool.len())]
    }

    /// Shortest node path from `from` to `to` (inclusive), Dijkstra on edge length.
    pub fn route(&self, from: usize, to: usize) -> Vec<usize> {
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        let mut done = vec![false; n];
        dist[from] = 0.0;
        for _ in 0..n {
            let Some(u) = (0..n).filter(|&i| !done[i] && dist[i].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b])) else {
                break;
            };
            if u == to {
                break;
            }
            done[u] = true;
            for v in self.neighbours(u) {
                let d = dist[u] + self.nodes[u].distance(self.nodes[v]);
                if d < dist[v] {
                    dist[v] = d;
                    prev[v] = u;
                }
            }
        }
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = prev[cur];
            if cur == usize::MAX {
                return vec![from];
            }
            path.push(cur);
        }
        path.reverse();
        path
    }
}

/// Ego path waypoints: start on the near sidewalk, the point in front of the
/// crosswalk, and the point on the far sidewalk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoRoute {
    pub start: Vec2,
    pub start_yaw: f64,
    pub curb_point: Vec2,
    pub far_point: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapGeometry {
    pub road: Polyline,
    pub road_width: f64,
    pub lanes: Vec<Lane>,
    pub sidewalks: Vec<Polygon>,
    pub crosswalk: Rect,
    pub buildings: Vec<Building>,
    pub poles: Vec<Pole>,
    pub detectors: Vec<Detector>,
    pub walk_graph: WalkGraph,
    pub ego_route: EgoRoute,
}

const HEIGHTS: [f64; 8] = [9.0, 14.0, 7.0, 18.0, 11.0, 6.0, 15.0, 12.0];
const WIDTHS: [f64; 7] = [12.0, 8.0, 16.0, 10.0, 14.0, 9.0, 18.0];
const GAPS: [f64; 5] = [2.0, 0.5, 3.0, 1.0, 4.0];

/// Facade blocks filling `[x0, x1]` between `y0` and `y1`.
fn facade(x0: f64, x1: f64, y0: f64, y1: f64, phase: usize, out: &mut Vec<Building>) {
    let mut x = x0;
    let mut k = phase;
    while x < x1 {
        let w = WIDTHS[k % WIDTHS.len()].min(x1 - x);
        if w >= 2.0 {
            out.push(Building { footprint: Rect::new(x, y0, x + w, y1), height: HEIGHTS[k % HEIGHTS.len()] });
        }
        x += w + GAPS[k % GAPS.len()];
        k += 1;
    }
}

impl MapGeometry {
    pub fn on_crosswalk(&self, p: Vec2) -> bool {
        self.crosswalk.width() > 0.0 && self.crosswalk.contains(p)
    }

    pub fn crossing(cfg: &MapConfig) -> Result<Self, SimError> {
        if cfg.road_half_length <= cfg.detector_length + cfg.crosswalk_width || cfg.lane_width <= 0.0 || cfg.sidewalk_width <= 0.0 {
            return Err(SimError::Config("map dimensions leave no room for the crossing".into()));
        }
        let r = cfg.road_half_length;
        let lw = cfg.lane_width;
        let curb = lw;
        let outer = curb + cfg.sidewalk_width;
        let walk_y = curb + cfg.sidewalk_width / 2.0;
        let cw = cfg.crosswalk_width / 2.0;

        let road = Polyline { points: vec![Vec2::new(-r, 0.0), Vec2::new(r, 0.0)] };
        // Right-hand traffic: the southern lane runs east (+x), the northern lane west.
        let lanes = vec![
            Lane { centerline: Polyline { points: vec![Vec2::new(-r, -lw / 2.0), Vec2::new(r, -lw / 2.0)] }, crosswalk_entry: r - cw },
            Lane { centerline: Polyline { points: vec![Vec2::new(r, lw / 2.0), Vec2::new(-r, lw / 2.0)] }, crosswalk_entry: r - cw },
        ];
        let sidewalks = vec![Rect::new(-r, -outer, r, -curb).to_polygon(), Rect::new(-r, curb, r, outer).to_polygon()];
        // Overlaps each sidewalk slightly so the crossing is connected.
        let crosswalk = Rect::new(-cw, -curb - 0.25, cw, curb + 0.25);
        let detectors = vec![
            Detector { lane: 0, area: Rect::new(-cw - cfg.detector_length, -lw, -cw, 0.0) },
            Detector { lane: 1, area: Rect::new(cw, 0.0, cw + cfg.detector_length, lw) },
        ];

        let depth = cfg.building_depth;
        let mut buildings = Vec::new();
        facade(-r, r, -outer - depth, -outer, 0, &mut buildings);
        // A wide block faces the far end of the crosswalk.
        let wall = 8.0;
        buildings.push(Building { footprint: Rect::new(-wall, outer, wall, outer + depth), height: 10.0 });
        facade(wall + 1.5, r, outer, outer + depth, 3, &mut buildings);
        let mut west = Vec::new();
        facade(-r, -wall - 1.5, outer, outer + depth, 5, &mut west);
        buildings.extend(west);

        let mut poles = Vec::new();
        let mut x: f64 = -64.0;
        while x <= 64.0 {
            if x.abs() > cw + 2.0 {
                for y in [-curb - 0.4, curb + 0.4] {
                    poles.push(Pole { position: Vec2::new(x, y), radius: 0.12, height: 5.0 });
                }
            }
            x += 16.0;
        }

        let spacing = cfg.walk_node_spacing;
        let steps = (cfg.walk_extent / spacing).floor() as i64;
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut sidewalk_edges = Vec::new();
        let mut rung = [0usize; 2];
        for (side, y) in [-walk_y, walk_y].into_iter().enumerate() {
            let first = nodes.len();
            for k in -steps..=steps {
                if k == 0 {
                    rung[side] = nodes.len();
                }
                nodes.push(Vec2::new(k as f64 * spacing, y));
            }
            for i in first..nodes.len() - 1 {
                sidewalk_edges.push(edges.len());
                edges.push((i, i + 1));
            }
        }
        edges.push((rung[0], rung[1]));
        let walk_graph = WalkGraph { nodes, edges, sidewalk_edges };

        let near_y = -curb - cfg.curb_clearance;
        let ego_route = EgoRoute {
            start: Vec2::new(cfg.ego_start_distance, near_y),
            start_yaw: std::f64::consts::PI,
            curb_point: Vec2::new(0.0, near_y),
            far_point: Vec2::new(0.0, curb + cfg.curb_clearance),
        };

        let map = Self {
            road,
            road_width: 2.0 * lw,
            lanes,
            sidewalks,
            crosswalk,
            buildings,
            poles,
            detectors,
            walk_graph,
            ego_route,
        };
        map.validate(cfg.detector_length)?;
        Ok(map)
    }

    /// Checks the structural invariants of the map.
    pub fn validate(&self, detector_length: f64) -> Result<(), SimError> {
        let road_box = Rect::new(-self.road.length() / 2.0, -self.road_width / 2.0, self.road.length() / 2.0, self.road_width / 2.0);
        if !self.crosswalk.intersects(&road_box) {
            return Err(SimError::Config("crosswalk does not intersect the road".into()));
        }
        let touching = self.sidewalks.iter().filter(|s| s.intersects_rect(&self.crosswalk)).count();
        if touching < 2 {
            return Err(SimError::Config("crosswalk does not connect two sidewalks".into()));
        }
        for d in &self.detectors {
            if (d.area.width() - detector_length).abs() > 1e-9 {
                return Err(SimError::Config(format!("detector on lane {} is {} m long", d.lane, d.area.width())));
            }
        }
        if !self.on_sidewalk(self.ego_route.start) || !self.on_sidewalk(self.ego_route.far_point) {
            return Err(SimError::Config("ego route leaves the sidewalks".into()));
        }
        Ok(())
    }

    /// A map with no geometry at all.
    pub fn empty() -> Self {
        let origin = Vec2::new(0.0, 0.0);
        Self {
            road: Polyline { points: Vec::new() },
            road_width: 0.0,
            lanes: Vec::new(),
            sidewalks: Vec::new(),
            crosswalk: Rect::new(0.0, 0.0, 0.0, 0.0),
            buildings: Vec::new(),
            poles: Vec::new(),
            detectors: Vec::new(),
            walk_graph: WalkGraph { nodes: Vec::new(), edges: Vec::new(), sidewalk_edges: Vec::new() },
            ego_route: EgoRoute { start: origin, start_yaw: 0.0, curb_point: origin, far_point: origin },
        }
    }

    pub fn on_sidewalk(&self, p: Vec2) -> bool {
        self.sidewalks.iter().any(|s| s.contains(p))
    }

    pub fn on_road(&self, p: Vec2) -> bool {
        self.road.points.len() >= 2 && self.road.distance(p) <= self.road_width / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_is_valid() {
        let map = MapGeometry::crossing(&MapConfig::default()).unwrap();
        assert_eq!(map.detectors.len(), 2);
        for d in &map.detectors {
            assert_eq!(d.area.width(), 21.0);
        }
        assert!(map.buildings.iter().any(|b| b.footprint.contains(Vec2::new(0.0, 8.0))));
        for b in &map.buildings {
            assert!(!map.on_road(b.footprint.center()));
        }
    }

    #[test]
    fn walk_graph_routes_across_the_crosswalk() {
        let map = MapGeometry::crossing(&MapConfig::default()).unwrap();
        let g = &map.walk_graph;
        let south_west = 0;
        let north_east = g.nodes.len() - 1;
        let path = g.route(south_west, north_east);
        assert_eq!(path.first(), Some(&south_west));
        assert_eq!(path.last(), Some(&north_east));
        assert!(path.windows(2).any(|w| g.nodes[w[0]].y < 0.0 && g.nodes[w[1]].y > 0.0));
    }

    #[test]
    fn rejects_cramped_road() {
        let cfg = MapConfig { road_half_length: 20.0, ..Default::default() };
        assert!(MapGeometry::crossing(&cfg).is_err());
    }
}
