//! Episode runner: steps the world, renders every frame and records actions.

use serde::{Deserialize, Serialize};

use super::fsm::BodyState;
use super::geometry::Vec2;
use super::scenario::{build_scenario, ScenarioConfig};
use super::world::step_world;
use super::{SimError, DT};
use crate::dataset::{ActionVector, EpisodeLog};
use crate::render::{render_ego_frame, CameraModel, RenderConfig, SemanticPalette};

/// Ego state during the step from frame `step` to frame `step + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoTrace {
    pub step: u32,
    pub state: BodyState,
    pub position: Vec2,
    pub body_yaw: f64,
    pub head_yaw: f64,
    /// Clear flag the body FSM saw on this step.
    pub clear: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRun {
    pub log: EpisodeLog,
    pub trace: Vec<EgoTrace>,
    /// Step cap hit before the ego finished.
    pub truncated: bool,
    pub warnings: Vec<String>,
}

pub fn run_episode(config: &ScenarioConfig, seed: u64, render: &RenderConfig, palette: &SemanticPalette) -> Result<EpisodeRun, SimError> {
    let mut world = build_scenario(config, seed)?;
    let tail = (config.tail_seconds / DT).round() as u64;
    let mut log = EpisodeLog::new(seed, render.height, render.width, palette.len());
    let mut trace = Vec::new();
    let mut end_at = None;
    let mut truncated = false;
    loop {
        if end_at.is_some_and(|e| world.step >= e + tail) {
            break;
        }
        if world.step >= u64::from(config.max_steps) {
            truncated = end_at.is_none();
            if truncated {
                let msg = format!("episode {seed} truncated at {} steps before the ego finished", config.max_steps);
                log::warn!("{msg}");
                world.warnings.push(msg);
            }
            break;
        }
        let cam = CameraModel::for_ego(&world, render)?;
        let frame = render_ego_frame(&world, palette, &cam)?;
        let before = world.ego.pose.position;
        let step = world.step as u32;
        step_world(&mut world);
        let pose = world.ego.pose;
        trace.push(EgoTrace {
            step,
            state: world.ego.body.state,
            position: pose.position,
            body_yaw: pose.body_yaw,
            head_yaw: pose.head_yaw,
            clear: world.ego.body.clear,
        });
        log.push(frame, ActionVector::from_pose(pose.position != before, pose.body_yaw, pose.head_yaw));
        if end_at.is_none() && world.ego.body.state == BodyState::End {
            end_at = Some(world.step);
        }
    }
    Ok(EpisodeRun { log, trace, truncated, warnings: world.warnings })
}
