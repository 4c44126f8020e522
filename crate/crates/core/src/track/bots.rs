use super::Track;
use crate::kinematics::VehicleState;

/// Duration of the linear lateral blend when a bot changes lanes.
pub const LANE_BLEND_SECONDS: f64 = 1.0;

/// Lateral offset of lane `lane` (left positive). Single-lane roads keep bots
/// on the centerline.
pub fn lane_offset(track: &Track, lane: usize) -> f64 {
    if track.lane_count() < 2 {
        0.0
    } else if lane == 0 {
        track.width() / 4.0
    } else {
        -track.width() / 4.0
    }
}

/// Scripted car that drives its lane at constant speed and periodically
/// swaps lanes.
#[derive(Debug, Clone, PartialEq)]
pub struct BotCar {
    pub state: VehicleState,
    pub lane: usize,
    pub lane_change_period: f64,
    pub speed: f64,
    /// Unwrapped arclength travelled (start progress included).
    pub distance: f64,
    lateral: f64,
    blend_from: f64,
    blend_elapsed: f64,
    since_change: f64,
}

impl BotCar {
    pub fn new(track: &Track, progress: f64, lane: usize, speed: f64, lane_change_period: f64) -> Self {
        let lateral = lane_offset(track, lane);
        let (x, y, h) = track.point_at(progress, lateral);
        Self {
            state: VehicleState::new(x, y, h, speed),
            lane,
            lane_change_period,
            speed,
            distance: progress,
            lateral,
            blend_from: lateral,
            blend_elapsed: LANE_BLEND_SECONDS,
            since_change: 0.0,
        }
    }

    /// Current lateral offset from the centerline.
    pub fn lateral(&self) -> f64 {
        self.lateral
    }

    fn advance(&mut self, track: &Track, dt: f64) {
        self.distance += self.speed * dt;
        self.since_change += dt;
        if self.lane_change_period.is_finite() && self.since_change + 1e-9 >= self.lane_change_period {
            self.since_change -= self.lane_change_period;
            self.blend_from = self.lateral;
            self.blend_elapsed = 0.0;
            self.lane = 1 - self.lane.min(1);
        } else if self.blend_elapsed < LANE_BLEND_SECONDS {
            self.blend_elapsed = (self.blend_elapsed + dt).min(LANE_BLEND_SECONDS);
        }
        let target = lane_offset(track, self.lane);
        let f = self.blend_elapsed / LANE_BLEND_SECONDS;
        self.lateral = self.blend_from + (target - self.blend_from) * f;
        let (x, y, h) = track.point_at(self.distance, self.lateral);
        self.state = VehicleState::new(x, y, h, self.speed);
    }
}

/// Advances every bot by `dt` seconds.
pub fn step_bots(bots: &mut [BotCar], track: &Track, dt: f64) {
    for b in bots {
        b.advance(track, dt);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::complex_b;

    #[test]
    fn stays_in_lane_without_period() {
        let t = complex_b();
        let mut bots = vec![BotCar::new(&t, 1.0, 0, 2.0, f64::INFINITY)];
        for _ in 0..30 {
            step_bots(&mut bots, &t, 0.1);
        }
        assert!((bots[0].distance - 7.0).abs() < 1e-9);
        assert_eq!(bots[0].lane, 0);
        assert!((bots[0].lateral() - t.width() / 4.0).abs() < 1e-12);
        let p = t.project(bots[0].state.position());
        assert!((p.lateral - t.width() / 4.0).abs() < 1e-3);
    }

    #[test]
    fn toggles_at_period_with_linear_blend() {
        let t = complex_b();
        let mut bots = vec![BotCar::new(&t, 0.0, 0, 1.0, 5.0)];
        let dt = 0.25;
        for _ in 0..19 {
            step_bots(&mut bots, &t, dt);
        }
        assert_eq!(bots[0].lane, 0);
        step_bots(&mut bots, &t, dt); // t = 5 s
        assert_eq!(bots[0].lane, 1);
        assert_eq!(bots[0].lateral(), t.width() / 4.0);
        step_bots(&mut bots, &t, dt);
        step_bots(&mut bots, &t, dt); // half-way through the blend
        assert!(bots[0].lateral().abs() < 1e-15);
        step_bots(&mut bots, &t, dt);
        step_bots(&mut bots, &t, dt);
        assert_eq!(bots[0].lateral(), -t.width() / 4.0);
    }
}
