//! Ego-pedestrian state machines: a time-scheduled head FSM and the body FSM
//! with its wait-for-clear gate.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Slack for comparing clock values built from integer step counts.
const CLOCK_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSegment {
    pub start: f64,
    pub end: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadTiming {
    /// Time of the first (left) look.
    pub first_look: f64,
    pub left_duration: f64,
    /// Pause between the end of the left look and the start of the right look.
    pub pause: f64,
    pub right_duration: f64,
    pub look_yaw: f64,
}

impl Default for HeadTiming {
    fn default() -> Self {
        Self { first_look: 3.6, left_duration: 2.4, pause: 1.8, right_duration: 4.2, look_yaw: PI / 3.0 }
    }
}

/// Absolute-clock schedule of head yaw targets. Outside every segment the head looks ahead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadFsm {
    pub segments: Vec<HeadSegment>,
}

impl HeadFsm {
    pub fn new(segments: Vec<HeadSegment>) -> Result<Self, SimError> {
        let mut prev_end = f64::NEG_INFINITY;
        for s in &segments {
            if !(s.start < s.end) || s.start < prev_end || s.yaw.abs() > PI / 2.0 {
                return Err(SimError::Config(format!("bad head segment {s:?}")));
            }
            prev_end = s.end;
        }
        Ok(Self { segments })
    }

    pub fn from_timing(t: &HeadTiming) -> Result<Self, SimError> {
        let left_end = t.first_look + t.left_duration;
        let right_start = left_end + t.pause;
        Self::new(vec![
            HeadSegment { start: t.first_look, end: left_end, yaw: t.look_yaw },
            HeadSegment { start: right_start, end: right_start + t.right_duration, yaw: -t.look_yaw },
        ])
    }

    /// Target head yaw at episode time `t` (seconds).
    pub fn target(&self, t: f64) -> Result<f64, SimError> {
        if !(t >= 0.0) {
            return Err(SimError::Domain(format!("head schedule queried at t = {t}")));
        }
        let hit = self.segments.iter().find(|s| t + CLOCK_EPS >= s.start && t + CLOCK_EPS < s.end);
        Ok(hit.map_or(0.0, |s| s.yaw))
    }
}

impl Default for HeadFsm {
    fn default() -> Self {
        Self::from_timing(&HeadTiming::default()).expect("default head timing")
    }
}

/// Head yaw target of the default schedule.
pub fn head_fsm_state(t: f64) -> Result<f64, SimError> {
    HeadFsm::default().target(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BodyState {
    Walk1,
    TurnRight,
    Look,
    Walk2,
    Rest,
    TurnLeft,
    Walk3,
    End,
}

impl BodyState {
    pub const SEQUENCE: [BodyState; 8] = [
        BodyState::Walk1,
        BodyState::TurnRight,
        BodyState::Look,
        BodyState::Walk2,
        BodyState::Rest,
        BodyState::TurnLeft,
        BodyState::Walk3,
        BodyState::End,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> Self {
        Self::SEQUENCE[(self.index() + 1).min(7)]
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyState::Walk1 => "walk1",
            BodyState::TurnRight => "turn_r",
            BodyState::Look => "look",
            BodyState::Walk2 => "walk2",
            BodyState::Rest => "rest",
            BodyState::TurnLeft => "turn_l",
            BodyState::Walk3 => "walk3",
            BodyState::End => "end",
        }
    }
}

/// Minimum time spent in each state, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyDurations {
    pub walk1: f64,
    pub turn_right: f64,
    pub look: f64,
    pub walk2: f64,
    pub rest: f64,
    pub turn_left: f64,
    pub walk3: f64,
}

impl BodyDurations {
    pub fn of(&self, s: BodyState) -> f64 {
        match s {
            BodyState::Walk1 => self.walk1,
            BodyState::TurnRight => self.turn_right,
            BodyState::Look => self.look,
            BodyState::Walk2 => self.walk2,
            BodyState::Rest => self.rest,
            BodyState::TurnLeft => self.turn_left,
            BodyState::Walk3 => self.walk3,
            BodyState::End => f64::INFINITY,
        }
    }

    pub fn total(&self) -> f64 {
        BodyState::SEQUENCE[..7].iter().map(|&s| self.of(s)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyFsm {
    pub state: BodyState,
    pub entered_at: f64,
    pub durations: BodyDurations,
    /// Last clear flag seen by the machine.
    pub clear: bool,
}

impl BodyFsm {
    pub fn new(durations: BodyDurations) -> Self {
        Self { state: BodyState::Walk1, entered_at: 0.0, durations, clear: false }
    }
}

/// Advances at most one state: the timer must have elapsed, and leaving `look`
/// additionally needs the clear flag.
pub fn body_fsm_step(mut fsm: BodyFsm, c: bool, t: f64) -> BodyFsm {
    fsm.clear = c;
    if fsm.state == BodyState::End {
        return fsm;
    }
    let elapsed = t - fsm.entered_at;
    let timer_done = elapsed + CLOCK_EPS >= fsm.durations.of(fsm.state);
    let gate = fsm.state != BodyState::Look || c;
    if timer_done && gate {
        fsm.state = fsm.state.next();
        fsm.entered_at = t;
    }
    fsm
}
