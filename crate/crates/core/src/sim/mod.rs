//! Fixed-step crossing simulation: map, ego state machines, crowd and traffic.

pub mod episode;
pub mod fsm;
pub mod geometry;
pub mod map;
pub mod scenario;
pub mod world;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use episode::{run_episode, EgoTrace, EpisodeRun};
pub use fsm::{body_fsm_step, head_fsm_state, BodyDurations, BodyFsm, BodyState, HeadFsm, HeadSegment, HeadTiming};
pub use geometry::{wrap_angle, OrientedBox, Polygon, Polyline, Rect, Vec2};
pub use map::{Building, Detector, EgoRoute, Lane, MapConfig, MapGeometry, Pole, WalkGraph};
pub use scenario::{build_scenario, BodyTiming, CountRange, CrowdConfig, EgoConfig, ScenarioConfig, Span, TrafficConfig};
pub use world::{detector_clear, step_world, AgentKind, AgentPose, DetectorState, Ego, Footprint, Pedestrian, Vehicle, VehicleKind, WorldState};

/// Simulation step in seconds.
pub const DT: f64 = 0.06;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Render(#[from] crate::render::RenderError),
}

/// Named PRNG streams derived from one episode seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Spawn = 1,
    Vehicle = 2,
    PedestrianPath = 3,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
