//! Proportional waypoint controller.
//!
//! The pose error is formed in the world frame, its horizontal part is
//! rotated into the body frame by the estimated yaw, scaled per axis and
//! clamped. Integral and derivative gains exist only as fields pinned at
//! zero.

use crate::geometry::{rotate_world_to_body, wrap_angle, Pose, Vec2};
use serde::{Deserialize, Serialize};

/// Body-frame velocity command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ControlCommand {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    /// Yaw rate, rad/s.
    pub vyaw: f64,
}

impl ControlCommand {
    pub fn zero() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Gains {
    pub kx: f64,
    pub ky: f64,
    pub kz: f64,
    pub kyaw: f64,
    pub ki: f64,
    pub kd: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kx: 0.5,
            ky: 0.5,
            kz: 0.6,
            kyaw: 0.4,
            ki: 0.0,
            kd: 0.0,
        }
    }
}

impl Gains {
    pub fn validate(&self) -> Result<(), String> {
        if [self.kx, self.ky, self.kz, self.kyaw]
            .iter()
            .any(|k| !(k.is_finite() && *k >= 0.0))
        {
            return Err("proportional gains must be finite and >= 0".into());
        }
        if self.ki != 0.0 || self.kd != 0.0 {
            return Err("integral and derivative gains are not supported; set ki = kd = 0".into());
        }
        Ok(())
    }
}

/// Symmetric per-axis command limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommandBounds {
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub vyaw: f64,
}

impl Default for CommandBounds {
    fn default() -> Self {
        Self {
            vx: 1.0,
            vy: 1.0,
            vz: 0.7,
            vyaw: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub pos_tol: f64,
    pub yaw_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pos_tol: 0.25,
            yaw_tol: 0.1,
        }
    }
}

pub fn clamp(cmd: &ControlCommand, bounds: &CommandBounds) -> ControlCommand {
    ControlCommand {
        vx: cmd.vx.clamp(-bounds.vx, bounds.vx),
        vy: cmd.vy.clamp(-bounds.vy, bounds.vy),
        vz: cmd.vz.clamp(-bounds.vz, bounds.vz),
        vyaw: cmd.vyaw.clamp(-bounds.vyaw, bounds.vyaw),
    }
}

pub fn control_step(
    target: &Pose,
    estimate: &Pose,
    gains: &Gains,
    bounds: &CommandBounds,
) -> ControlCommand {
    let e = target.position - estimate.position;
    let body = rotate_world_to_body(Vec2::new(e.x, e.y), estimate.yaw);
    let e_yaw = wrap_angle(target.yaw - estimate.yaw);
    clamp(
        &ControlCommand {
            vx: gains.kx * body.x,
            vy: gains.ky * body.y,
            vz: gains.kz * e.z,
            vyaw: gains.kyaw * e_yaw,
        },
        bounds,
    )
}

/// Strictly inside both tolerances.
pub fn waypoint_reached(target: &Pose, estimate: &Pose, tol: &Tolerances) -> bool {
    (target.position - estimate.position).norm() < tol.pos_tol
        && wrap_angle(target.yaw - estimate.yaw).abs() < tol.yaw_tol
}
