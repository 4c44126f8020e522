//! Discrete-time kinematic bicycle model.
//!
//! Continuous dynamics, integrated with forward Euler:
//!
//! ```text
//! ẋ = v cos(ψ + β)     ẏ = v sin(ψ + β)
//! ψ̇ = (v / l_r) sin β  v̇ = a
//! β = atan((l_r / L) tan δ_f)
//! ```

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One control step per rendered frame at 15 fps.
pub const DEFAULT_DT: f64 = 1.0 / 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Center of mass to rear axle (m).
    pub l_r: f64,
    /// Vehicle length (m).
    pub length: f64,
    /// Lateral wheel separation (m).
    pub track_width: f64,
    pub max_accel: f64,
    pub max_steer: f64,
    pub v_max: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            l_r: 0.15,
            length: 0.30,
            track_width: 0.20,
            max_accel: 4.0,
            max_steer: 0.5,
            v_max: 4.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_r", self.l_r),
            ("length", self.length),
            ("track_width", self.track_width),
            ("max_accel", self.max_accel),
            ("max_steer", self.max_steer),
            ("v_max", self.v_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("vehicle.{name} must be positive, got {v}")));
            }
        }
        if self.l_r >= self.length {
            return Err(Error::Config(format!(
                "vehicle.l_r ({}) must be less than vehicle.length ({})",
                self.l_r, self.length
            )));
        }
        if self.max_steer >= FRAC_PI_2 {
            return Err(Error::Config("vehicle.max_steer must be below π/2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Heading, normalized to (−π, π].
    pub psi: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn new(x: f64, y: f64, psi: f64, v: f64) -> Self {
        Self {
            x,
            y,
            psi: normalize_angle(psi),
            v,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.psi.is_finite() && self.v.is_finite()
    }
}

/// Acceleration and front steering angle. Out-of-range values are clamped by
/// [`step`], never rejected.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub steer: f64,
}

impl ControlInput {
    pub fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }

    pub fn clamped(&self, params: &VehicleParams) -> Self {
        Self {
            accel: self.accel.clamp(-params.max_accel, params.max_accel),
            steer: self.steer.clamp(-params.max_steer, params.max_steer),
        }
    }
}

/// Maps any angle to (−π, π].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Slip angle at the center of mass for front steering `steer`.
pub fn slip_angle(params: &VehicleParams, steer: f64) -> Result<f64> {
    if !(steer.abs() < FRAC_PI_2) {
        return Err(Error::Domain(format!(
            "steering angle {steer} must satisfy |δ_f| < π/2"
        )));
    }
    Ok(((params.l_r / params.length) * steer.tan()).atan())
}

/// Advances the state by one forward-Euler step of length `dt`.
pub fn step(
    state: &VehicleState,
    input: ControlInput,
    params: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() || !input.accel.is_finite() || !input.steer.is_finite() {
        return Err(Error::Numeric {
            op: "vehicle step",
            detail: format!("non-finite state {state:?} or input {input:?}"),
        });
    }
    let u = input.clamped(params);
    let beta = slip_angle(params, u.steer)?;
    let heading = state.psi + beta;
    let next = VehicleState {
        x: state.x + dt * state.v * heading.cos(),
        y: state.y + dt * state.v * heading.sin(),
        psi: normalize_angle(state.psi + dt * (state.v / params.l_r) * beta.sin()),
        v: (state.v + dt * u.accel).clamp(0.0, params.v_max),
    };
    if !next.is_finite() {
        return Err(Error::Numeric {
            op: "vehicle step",
            detail: format!("non-finite result {next:?}"),
        });
    }
    Ok(next)
}

/// Corners of the `length × track_width` wheelbase rectangle, in the order
/// front-left, front-right, rear-right, rear-left.
pub fn wheel_positions(state: &VehicleState, params: &VehicleParams) -> [(f64, f64); 4] {
    let (hl, hw) = (params.length / 2.0, params.track_width / 2.0);
    let (s, c) = state.psi.sin_cos();
    [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(fx, ly)| {
        (state.x + fx * c - ly * s, state.y + fx * s + ly * c)
    })
}
