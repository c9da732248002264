//! Circular waypoint path around a detected target.

use crate::geometry::{wrap_angle, Pose, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("orbit radius {radius:.3} m is below the minimum {min_radius:.3} m")]
    DegenerateOrbit { radius: f64, min_radius: f64 },
    #[error("an orbit needs at least 2 waypoints, got {0}")]
    TooFewWaypoints(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrbitDirection {
    #[default]
    Counterclockwise,
    Clockwise,
}

impl OrbitDirection {
    pub fn sign(self) -> f64 {
        match self {
            Self::Counterclockwise => 1.0,
            Self::Clockwise => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub index: usize,
    pub pose: Pose,
    /// Polar angle of the waypoint around the center, world frame.
    pub angle_on_circle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitPlan {
    pub center: Vec3,
    pub radius: f64,
    pub altitude: f64,
    pub direction: OrbitDirection,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub waypoints: usize,
    /// When set, overrides `waypoints` with one waypoint per this many
    /// meters of arc.
    pub spacing: Option<f64>,
    pub direction: OrbitDirection,
    pub min_radius: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            waypoints: 12,
            spacing: None,
            direction: OrbitDirection::Counterclockwise,
            min_radius: 0.5,
        }
    }
}

impl PlannerParams {
    pub fn waypoint_count(&self, radius: f64) -> usize {
        match self.spacing {
            Some(s) if s > 0.0 => waypoints_for_spacing(radius, s),
            _ => self.waypoints,
        }
    }
}

/// `max(2, round(2πr / spacing))`.
pub fn waypoints_for_spacing(radius: f64, spacing: f64) -> usize {
    ((TAU * radius / spacing).round() as usize).max(2)
}

/// Heading at `from` that looks at `to` in the horizontal plane.
pub fn yaw_facing(from: &Vec3, to: &Vec3) -> f64 {
    let d = to - from;
    (-d.x).atan2(d.y)
}

/// Plans `n` evenly spaced waypoints on the horizontal circle through the
/// drone's position, centered on the target and held at the drone's
/// altitude. Waypoint 0 is the drone's current bearing from the target.
pub fn plan_orbit(
    target: &Vec3,
    drone: &Pose,
    n: usize,
    direction: OrbitDirection,
    min_radius: f64,
) -> Result<OrbitPlan, PlanError> {
    if n < 2 {
        return Err(PlanError::TooFewWaypoints(n));
    }
    let offset = drone.position.xy() - target.xy();
    let radius = offset.norm();
    if !(radius >= min_radius) {
        return Err(PlanError::DegenerateOrbit { radius, min_radius });
    }
    let altitude = drone.position.z;
    let start = offset.y.atan2(offset.x);
    let step = direction.sign() * TAU / n as f64;
    let hub = Vec3::new(target.x, target.y, altitude);

    let waypoints = (0..n)
        .map(|k| {
            let angle = start + step * k as f64;
            let position = hub + Vec3::new(radius * angle.cos(), radius * angle.sin(), 0.0);
            Waypoint {
                index: k,
                pose: Pose::new(position, yaw_facing(&position, &hub)),
                angle_on_circle: wrap_angle(angle),
            }
        })
        .collect();

    Ok(OrbitPlan {
        center: *target,
        radius,
        altitude,
        direction,
        waypoints,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NextWaypoint<'a> {
    Waypoint(&'a Waypoint),
    Complete,
}

/// The waypoint after `current_index`, or `Complete` past the last one.
pub fn next_waypoint(plan: &OrbitPlan, current_index: usize) -> NextWaypoint<'_> {
    match plan.waypoints.get(current_index + 1) {
        Some(w) => NextWaypoint::Waypoint(w),
        None => NextWaypoint::Complete,
    }
}
