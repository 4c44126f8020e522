//! The racing environment: one step function over discrete actions that moves
//! the ego car and the bots, then renders the next frame.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{self, ControlInput, VehicleParams, VehicleState, DEFAULT_DT};
use crate::render::{CameraConfig, DomainAppearance, Observation, Renderer};
use crate::tensor::Tensor;
use crate::track::{
    is_crashed, is_off_track, step_bots, BotCar, EpisodeOutcome, EpisodeStatus, ProgressTracker, RewardKind,
    RewardScale, Track, TrackPose,
};

/// Discrete steering × target-speed grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionGrid {
    pub steering_bins: usize,
    /// Target speeds as fractions of `v_max`, one per throttle bin.
    pub speed_fractions: Vec<f64>,
    /// Proportional gain of the speed controller, 1/s.
    pub speed_gain: f64,
}

impl Default for ActionGrid {
    fn default() -> Self {
        Self {
            steering_bins: 5,
            speed_fractions: vec![0.25, 0.4, 0.55],
            speed_gain: 4.0,
        }
    }
}

impl ActionGrid {
    pub fn len(&self) -> usize {
        self.steering_bins * self.speed_fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn throttle_bins(&self) -> usize {
        self.speed_fractions.len()
    }

    /// `(steering bin, throttle bin)` of a flat action index.
    pub fn split(&self, action: usize) -> (usize, usize) {
        (action / self.throttle_bins(), action % self.throttle_bins())
    }

    /// Flat action index of a `(steering bin, throttle bin)` pair.
    pub fn index(&self, steer_bin: usize, throttle_bin: usize) -> usize {
        steer_bin * self.throttle_bins() + throttle_bin
    }

    pub fn steer(&self, bin: usize, params: &VehicleParams) -> f64 {
        if self.steering_bins == 1 {
            return 0.0;
        }
        params.max_steer * (-1.0 + 2.0 * bin as f64 / (self.steering_bins - 1) as f64)
    }

    /// Control input for `action` given the current speed.
    pub fn decode(&self, action: usize, v: f64, params: &VehicleParams) -> Result<ControlInput> {
        if action >= self.len() {
            return Err(Error::Index {
                op: "decode action",
                index: action,
                len: self.len(),
            });
        }
        let (s, t) = self.split(action);
        let target = self.speed_fractions[t] * params.v_max;
        let accel = (self.speed_gain * (target - v)).clamp(-params.max_accel, params.max_accel);
        Ok(ControlInput::new(accel, self.steer(s, params)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.steering_bins == 0 || self.speed_fractions.is_empty() {
            return Err(Error::Config("action grid needs at least one bin per axis".into()));
        }
        if self.speed_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("speed fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BotConfig {
    pub count: usize,
    /// Bot speed as a fraction of `v_max`.
    pub speed_fraction: f64,
    pub lane_change_period: f64,
    /// Arclength between the ego start and the first bot, and between bots.
    pub spacing: f64,
}

impl Default for BotConfig {
    fn default() -> Self {
        Self {
            count: 0,
            speed_fraction: 0.5,
            lane_change_period: 5.0,
            spacing: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub vehicle: VehicleParams,
    pub camera: CameraConfig,
    pub actions: ActionGrid,
    pub reward: RewardKind,
    pub bots: BotConfig,
    pub max_steps: usize,
    /// Defaults to half the vehicle length plus half a bot length.
    pub crash_radius: Option<f64>,
    pub dt: f64,
    /// Random start offsets: lateral (m) and heading (rad) drawn uniformly
    /// from `±start_jitter`. Start progress is uniform over the lap when
    /// `random_start` is set, zero otherwise.
    pub random_start: bool,
    pub start_jitter: (f64, f64),
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            vehicle: VehicleParams::default(),
            camera: CameraConfig::default(),
            actions: ActionGrid::default(),
            reward: RewardKind::Centerline,
            bots: BotConfig::default(),
            max_steps: 1000,
            crash_radius: None,
            dt: DEFAULT_DT,
            random_start: true,
            start_jitter: (0.05, 0.05),
        }
    }
}

impl EnvConfig {
    pub fn crash_radius(&self) -> f64 {
        self.crash_radius.unwrap_or(self.vehicle.length)
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.camera.validate()?;
        self.actions.validate()?;
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.crash_radius.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::Config("crash_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct Transition {
    pub reward: f64,
    pub done: bool,
    /// Present on the step that ends an episode.
    pub outcome: Option<EpisodeOutcome>,
}

/// Anything the trainer can collect rollouts from.
pub trait Environment {
    fn num_actions(&self) -> usize;
    /// Current observation, `[C, H, W]`.
    fn observation(&self) -> &Tensor;
    fn step(&mut self, action: usize) -> Result<Transition>;
    fn reset(&mut self);
    /// Fraction of the task completed in the running episode, for logging.
    fn progress(&self) -> f64 {
        0.0
    }
}

/// Everything needed to re-evaluate the reward of a logged step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub state: VehicleState,
    pub pose: TrackPose,
    pub steer_changed: bool,
    pub off_track: bool,
    pub reward: f64,
}

pub struct RacingEnv {
    track: Arc<Track>,
    appearance: DomainAppearance,
    config: EnvConfig,
    renderer: Renderer,
    scale: RewardScale,
    rng: ChaCha8Rng,
    state: VehicleState,
    bots: Vec<BotCar>,
    tracker: ProgressTracker,
    start_progress: f64,
    steps: usize,
    last_steer_bin: Option<usize>,
    frame: u64,
    obs: Observation,
    bot_relative: Vec<f64>,
    cars_passed: usize,
    speed_sum: f64,
    last_log: Option<StepLog>,
}

impl RacingEnv {
    pub fn new(track: Arc<Track>, appearance: DomainAppearance, config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        appearance.validate()?;
        track.check_vehicle_fits(config.vehicle.track_width)?;
        let renderer = Renderer::new(config.camera)?;
        let scale = RewardScale::new(&track, &config.vehicle);
        let state = track.state_at(0.0, 0.0, 0.0, 0.0);
        let obs = renderer.render(&track, &state, &[], &appearance, 0);
        let tracker = ProgressTracker::new(&track, 0.0);
        let mut env = Self {
            track,
            appearance,
            config,
            renderer,
            scale,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            bots: Vec::new(),
            tracker,
            start_progress: 0.0,
            steps: 0,
            last_steer_bin: None,
            frame: 0,
            obs,
            bot_relative: Vec::new(),
            cars_passed: 0,
            speed_sum: 0.0,
            last_log: None,
        };
        env.reset();
        Ok(env)
    }

    /// Starts a new episode at the given pose.
    pub fn reset_to(&mut self, progress: f64, lateral: f64, heading_offset: f64) {
        let length = self.track.total_length();
        let progress = progress.rem_euclid(length);
        self.state = self.track.state_at(progress, lateral, heading_offset, 0.0);
        self.start_progress = progress;
        self.tracker = ProgressTracker::new(&self.track, progress);
        let bc = &self.config.bots;
        let lanes = self.track.lane_count();
        self.bots = (0..bc.count)
            .map(|k| {
                BotCar::new(
                    &self.track,
                    progress + bc.spacing * (k + 1) as f64,
                    k % lanes,
                    bc.speed_fraction * self.config.vehicle.v_max,
                    bc.lane_change_period,
                )
            })
            .collect();
        self.bot_relative = self.bots.iter().map(|b| b.distance - progress).collect();
        self.steps = 0;
        self.last_steer_bin = None;
        self.cars_passed = 0;
        self.speed_sum = 0.0;
        self.last_log = None;
        self.frame += 1;
        self.render();
    }

    fn render(&mut self) {
        let bots: Vec<VehicleState> = self.bots.iter().map(|b| b.state).collect();
        self.obs = self.renderer.render(&self.track, &self.state, &bots, &self.appearance, self.frame);
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn appearance(&self) -> &DomainAppearance {
        &self.appearance
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn bots(&self) -> &[BotCar] {
        &self.bots
    }

    pub fn renderer(&self) -> &Renderer {
        &self.renderer
    }

    pub fn current_observation(&self) -> &Observation {
        &self.obs
    }

    pub fn reward_scale(&self) -> &RewardScale {
        &self.scale
    }

    /// Details of the most recent step, for replay checks.
    pub fn last_log(&self) -> Option<&StepLog> {
        self.last_log.as_ref()
    }

    pub fn progress_fraction(&self) -> f64 {
        self.tracker.fraction()
    }

    fn outcome(&self, status: EpisodeStatus) -> EpisodeOutcome {
        EpisodeOutcome {
            status,
            progress_fraction: self.tracker.fraction(),
            steps: self.steps,
            cars_passed: self.cars_passed,
        }
    }

    /// Mean ego speed over the current episode so far.
    pub fn mean_speed(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.speed_sum / self.steps as f64
        }
    }

    /// Advances the world one control step. Does not reset on terminal
    /// steps; see [`Environment::step`] for the auto-resetting variant.
    pub fn advance(&mut self, action: usize) -> Result<(f64, EpisodeStatus)> {
        let p = &self.config.vehicle;
        let input = self.config.actions.decode(action, self.state.v, p)?;
        let (steer_bin, _) = self.config.actions.split(action);
        let steer_changed = self.last_steer_bin.is_some_and(|b| b != steer_bin);
        self.last_steer_bin = Some(steer_bin);

        self.state = kinematics::step(&self.state, input, p, self.config.dt)?;
        step_bots(&mut self.bots, &self.track, self.config.dt);
        self.steps += 1;
        self.speed_sum += self.state.v;
        self.frame += 1;

        let pose = self.track.project_state(&self.state);
        self.tracker.update(pose.progress);
        let ego_distance = self.start_progress + self.tracker.distance();
        for (rel, bot) in self.bot_relative.iter_mut().zip(&self.bots) {
            let now = bot.distance - ego_distance;
            if *rel > 0.0 && now <= 0.0 {
                self.cars_passed += 1;
            }
            *rel = now;
        }

        let off = is_off_track(&self.track, &self.state, p);
        let reward = self.config.reward.evaluate(&pose, self.state.v, steer_changed, off, &self.scale);
        self.last_log = Some(StepLog {
            state: self.state,
            pose,
            steer_changed,
            off_track: off,
            reward,
        });
        let status = if off {
            EpisodeStatus::OffTrack
        } else if is_crashed(&self.state, &self.bots, self.config.crash_radius()) {
            EpisodeStatus::Crashed
        } else if self.tracker.lap_complete() {
            EpisodeStatus::LapComplete
        } else if self.steps >= self.config.max_steps {
            EpisodeStatus::Timeout
        } else {
            EpisodeStatus::Running
        };
        self.render();
        Ok((reward, status))
    }

    /// Outcome of the episode in its current state.
    pub fn episode_outcome(&self, status: EpisodeStatus) -> EpisodeOutcome {
        self.outcome(status)
    }
}

impl Environment for RacingEnv {
    fn num_actions(&self) -> usize {
        self.config.actions.len()
    }

    fn observation(&self) -> &Tensor {
        &self.obs.pixels
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let (reward, status) = self.advance(action)?;
        if status.is_terminal() {
            let outcome = self.outcome(status);
            self.reset();
            Ok(Transition {
                reward,
                done: true,
                outcome: Some(outcome),
            })
        } else {
            Ok(Transition {
                reward,
                done: false,
                outcome: None,
            })
        }
    }

    fn reset(&mut self) {
        let (jl, jh) = self.config.start_jitter;
        let progress = if self.config.random_start {
            self.rng.random::<f64>() * self.track.total_length()
        } else {
            0.0
        };
        let lateral = if jl > 0.0 { self.rng.random_range(-jl..=jl) } else { 0.0 };
        let heading = if jh > 0.0 { self.rng.random_range(-jh..=jh) } else { 0.0 };
        self.reset_to(progress, lateral, heading);
    }

    fn progress(&self) -> f64 {
        self.progress_fraction()
    }
}
