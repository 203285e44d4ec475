//! Column raycaster with a ground-plane cast and depth-tested billboards.

use serde::{Deserialize, Serialize};

use super::{Frame, RenderError, SemanticPalette, BASE_CATEGORIES, BUILDING, CROSSWALK, PEDESTRIAN, POLE, ROAD, SIDEWALK, SKY, VEHICLE};
use crate::sim::{AgentKind, AgentPose, MapGeometry, Vec2, WorldState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub fov_deg: f64,
    pub eye_height: f64,
    pub max_distance: f64,
    /// Category of ground that is neither road, crosswalk nor sidewalk.
    pub default_ground: u8,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { height: 45, width: 85, fov_deg: 90.0, eye_height: 1.6, max_distance: 60.0, default_ground: SIDEWALK }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub position: Vec2,
    pub yaw: f64,
    pub config: RenderConfig,
}

impl CameraModel {
    pub fn new(config: RenderConfig, position: Vec2, yaw: f64) -> Result<Self, RenderError> {
        if !(config.fov_deg > 0.0 && config.fov_deg < 180.0) {
            return Err(RenderError::Camera(format!("field of view {} is outside (0, 180)", config.fov_deg)));
        }
        if config.width == 0 || config.height < 2 || !(config.eye_height > 0.0) || !(config.max_distance > 0.0) {
            return Err(RenderError::Camera("image size, eye height and draw distance must be positive".into()));
        }
        Ok(Self { position, yaw, config })
    }

    /// Camera at the ego's eye, looking along body yaw + head yaw.
    pub fn for_ego(world: &WorldState, config: &RenderConfig) -> Result<Self, RenderError> {
        let pose = &world.ego.pose;
        Self::new(config.clone(), pose.position, pose.body_yaw + pose.head_yaw)
    }

    /// Distance of the projection plane in pixels.
    pub fn plane_distance(&self) -> f64 {
        (self.config.width as f64 / 2.0) / (self.config.fov_deg.to_radians() / 2.0).tan()
    }

    pub fn horizon(&self) -> usize {
        self.config.height / 2
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::from_angle(self.yaw)
    }

    /// Unit vector pointing to the right of the view direction.
    pub fn right(&self) -> Vec2 {
        let f = self.forward();
        Vec2::new(f.y, -f.x)
    }

    /// Ray through the center of column `col`, scaled so its forward component is 1.
    fn column_ray(&self, col: usize) -> Vec2 {
        let k = (col as f64 + 0.5 - self.config.width as f64 / 2.0) / self.plane_distance();
        self.forward() + self.right() * k
    }
}

/// Ground point seen by the central column at `row`.
pub fn floor_cast(row: usize, cam: &CameraModel) -> Result<Vec2, RenderError> {
    let depth = floor_depth(row, cam)?;
    Ok(cam.position + cam.forward() * depth)
}

/// Ground point seen by pixel (`row`, `col`).
pub fn floor_cast_at(row: usize, col: usize, cam: &CameraModel) -> Result<Vec2, RenderError> {
    let depth = floor_depth(row, cam)?;
    Ok(cam.position + cam.column_ray(col) * depth)
}

/// Forward distance to the ground plane, clamped to the draw distance.
fn floor_depth(row: usize, cam: &CameraModel) -> Result<f64, RenderError> {
    let h = cam.horizon();
    if row <= h {
        return Err(RenderError::Domain(format!("row {row} is not below the horizon row {h}")));
    }
    Ok((cam.config.eye_height * cam.plane_distance() / (row - h) as f64).min(cam.config.max_distance))
}

fn ground_category(map: &MapGeometry, p: Vec2, default: u8) -> u8 {
    if map.on_crosswalk(p) {
        CROSSWALK
    } else if map.on_road(p) {
        ROAD
    } else if map.on_sidewalk(p) {
        SIDEWALK
    } else {
        default
    }
}

struct Billboard {
    position: Vec2,
    width: f64,
    height: f64,
    label: u8,
}

/// Renders a map and a set of agents from `cam`.
pub fn render_scene(map: &MapGeometry, agents: &[AgentPose], cam: &CameraModel) -> Frame {
    let (hh, ww) = (cam.config.height, cam.config.width);
    let h = cam.horizon() as f64;
    let dp = cam.plane_distance();
    let eye = cam.config.eye_height;
    let max_d = cam.config.max_distance;
    let mut frame = Frame::filled(hh, ww, SKY);
    let mut depth = vec![f64::INFINITY; hh * ww];

    for col in 0..ww {
        let ray = cam.column_ray(col);
        let wall = map
            .buildings
            .iter()
            .filter_map(|b| b.footprint.ray_hit(cam.position, ray).map(|t| (t, b.height)))
            .filter(|&(t, _)| t <= max_d)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        for row in 0..hh {
            let r = row as f64;
            let idx = row * ww + col;
            if let Some((t, wall_h)) = wall {
                let top = h - (wall_h - eye) * dp / t;
                let bottom = h + eye * dp / t;
                if r >= top && r <= bottom {
                    frame.labels[idx] = BUILDING;
                    depth[idx] = t;
                    continue;
                }
            }
            if row > cam.horizon() {
                let g = eye * dp / (r - h);
                let p = cam.position + ray * g.min(max_d);
                frame.labels[idx] = ground_category(map, p, cam.config.default_ground);
                depth[idx] = g;
            }
        }
    }

    let fwd = cam.forward();
    let right = cam.right();
    let boards = agents
        .iter()
        .map(|a| Billboard {
            position: a.position,
            width: a.apparent_width(fwd),
            height: a.height,
            label: if a.kind == AgentKind::Vehicle { VEHICLE } else { PEDESTRIAN },
        })
        .chain(map.poles.iter().map(|p| Billboard { position: p.position, width: 2.0 * p.radius, height: p.height, label: POLE }));
    for b in boards {
        let rel = b.position - cam.position;
        let d = rel.dot(fwd);
        if d < 0.05 || d > max_d {
            continue;
        }
        let center = ww as f64 / 2.0 + rel.dot(right) * dp / d;
        let half = b.width / 2.0 * dp / d;
        let top = h - (b.height - eye) * dp / d;
        let bottom = h + eye * dp / d;
        let c0 = (center - half - 0.5).ceil().max(0.0) as usize;
        let c1 = (center + half - 0.5).floor().min(ww as f64 - 1.0);
        let r0 = top.ceil().max(0.0) as usize;
        let r1 = bottom.floor().min(hh as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        for row in r0..=r1 as usize {
            for col in c0..=c1 as usize {
                let idx = row * ww + col;
                if d < depth[idx] {
                    depth[idx] = d;
                    frame.labels[idx] = b.label;
                }
            }
        }
    }
    frame
}

/// Renders the ego-pedestrian's view of `world`.
pub fn render_ego_frame(world: &WorldState, palette: &SemanticPalette, cam: &CameraModel) -> Result<Frame, RenderError> {
    if palette.len() < BASE_CATEGORIES {
        return Err(RenderError::Domain(format!("palette has {} categories, the renderer needs {BASE_CATEGORIES}", palette.len())));
    }
    let agents: Vec<AgentPose> = world.pedestrians.iter().map(|p| p.pose).chain(world.vehicles.iter().map(|v| v.pose)).collect();
    Ok(render_scene(&world.map, &agents, cam))
}
