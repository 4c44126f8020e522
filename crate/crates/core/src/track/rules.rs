use serde::{Deserialize, Serialize};

use super::{BotCar, Track, TrackPose};
use crate::kinematics::{wheel_positions, VehicleParams, VehicleState};

/// Off track when every wheel lies outside the road.
pub fn is_off_track(track: &Track, state: &VehicleState, params: &VehicleParams) -> bool {
    let half = track.width() / 2.0;
    wheel_positions(state, params)
        .iter()
        .all(|&w| track.project(w).lateral.abs() > half)
}

/// Stricter variant: any single wheel outside the road.
pub fn is_off_track_any_wheel(track: &Track, state: &VehicleState, params: &VehicleParams) -> bool {
    let half = track.width() / 2.0;
    wheel_positions(state, params)
        .iter()
        .any(|&w| track.project(w).lateral.abs() > half)
}

/// True when any bot center is strictly closer than `radius` to the ego center.
pub fn is_crashed(ego: &VehicleState, bots: &[BotCar], radius: f64) -> bool {
    bots.iter().any(|b| {
        let d = (b.state.x - ego.x).hypot(b.state.y - ego.y);
        d < radius
    })
}

/// Quantities the reward functions normalize by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardScale {
    pub road_width: f64,
    pub v_max: f64,
    pub vehicle_track_width: f64,
}

impl RewardScale {
    pub fn new(track: &Track, params: &VehicleParams) -> Self {
        Self {
            road_width: track.width(),
            v_max: params.v_max,
            vehicle_track_width: params.track_width,
        }
    }

    fn speed_term(&self, v: f64) -> f64 {
        0.5 + 0.5 * (v / self.v_max).clamp(0.0, 1.0)
    }
}

/// Follow-the-center reward with speed incentive and steering-change penalty.
pub fn reward_centerline(
    pose: &TrackPose,
    v: f64,
    steer_changed: bool,
    off: bool,
    scale: &RewardScale,
) -> f64 {
    if off {
        return 0.0;
    }
    let centering = (1.0 - 2.0 * pose.lateral.abs() / scale.road_width).max(0.0);
    let steering = if steer_changed { 0.8 } else { 1.0 };
    centering * scale.speed_term(v) * steering
}

/// Stay-inside-the-white-lines reward.
pub fn reward_whiteline(pose: &TrackPose, v: f64, off: bool, scale: &RewardScale) -> f64 {
    if off {
        return 0.0;
    }
    if pose.lateral.abs() + scale.vehicle_track_width / 2.0 < scale.road_width / 2.0 {
        scale.speed_term(v)
    } else {
        0.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    #[default]
    Centerline,
    Whiteline,
}

impl RewardKind {
    pub fn evaluate(
        &self,
        pose: &TrackPose,
        v: f64,
        steer_changed: bool,
        off: bool,
        scale: &RewardScale,
    ) -> f64 {
        match self {
            RewardKind::Centerline => reward_centerline(pose, v, steer_changed, off, scale),
            RewardKind::Whiteline => reward_whiteline(pose, v, off, scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpisodeStatus {
    Running,
    LapComplete,
    OffTrack,
    Crashed,
    Timeout,
}

impl EpisodeStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, EpisodeStatus::Running)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub status: EpisodeStatus,
    pub progress_fraction: f64,
    pub steps: usize,
    pub cars_passed: usize,
}

/// Unwraps centerline progress across the start line and keeps the best
/// fraction of a lap reached so far.
#[derive(Debug, Clone)]
pub struct ProgressTracker {
    length: f64,
    last: f64,
    unwrapped: f64,
    best: f64,
}

impl ProgressTracker {
    pub fn new(track: &Track, start_progress: f64) -> Self {
        Self {
            length: track.total_length(),
            last: start_progress,
            unwrapped: 0.0,
            best: 0.0,
        }
    }

    /// Feeds the new centerline progress; returns the lap fraction in `[0, 1]`.
    pub fn update(&mut self, progress: f64) -> f64 {
        let mut delta = progress - self.last;
        if delta > self.length / 2.0 {
            delta -= self.length;
        } else if delta < -self.length / 2.0 {
            delta += self.length;
        }
        self.last = progress;
        self.unwrapped += delta;
        self.best = self.best.max(self.unwrapped);
        self.fraction()
    }

    /// Signed distance travelled along the centerline since the start.
    pub fn distance(&self) -> f64 {
        self.unwrapped
    }

    pub fn fraction(&self) -> f64 {
        (self.best / self.length).clamp(0.0, 1.0)
    }

    pub fn lap_complete(&self) -> bool {
        self.best >= self.length
    }
}
