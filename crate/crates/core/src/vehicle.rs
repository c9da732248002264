//! Quadrotor plant and pose estimator.
//!
//! The plant is a first-order velocity lag on body-frame velocity commands.
//! The estimator runs four independent scalar Kalman filters (x, y, z, yaw):
//! prediction integrates the commanded velocity, vision pose measurements
//! correct it. When vision is unavailable the estimate is dead-reckoned and
//! the variances grow linearly.

use crate::controller::ControlCommand;
use crate::geometry::{rotate_body_to_world, wrap_angle, Pose, Vec2, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Velocity lag time constant, seconds.
    pub tau: f64,
    /// Above this |yaw rate| (rad/s) visual tracking is lost.
    pub yaw_loss_threshold: f64,
    /// Fewer visible map points than this and visual tracking is lost.
    pub min_tracked_points: usize,
    /// Process noise rate on x, y, z (m²/s).
    pub q_position: f64,
    /// Process noise rate on yaw (rad²/s).
    pub q_yaw: f64,
    /// Initial estimator variance on every axis.
    pub initial_variance: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            tau: 0.5,
            yaw_loss_threshold: 0.5,
            min_tracked_points: 15,
            q_position: 0.01,
            q_yaw: 0.01,
            initial_variance: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pose: Pose,
    /// World-frame velocity, m/s.
    pub velocity: Vec3,
    pub yaw_rate: f64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            pose,
            velocity: Vec3::zeros(),
            yaw_rate: 0.0,
        }
    }
}

/// Advances the plant by `dt` seconds under a body-frame command.
pub fn step_dynamics(
    state: &VehicleState,
    cmd: &ControlCommand,
    dt: f64,
    params: &VehicleParams,
) -> VehicleState {
    if dt <= 0.0 {
        return *state;
    }
    let alpha = (dt / params.tau).min(1.0);
    let horizontal = rotate_body_to_world(Vec2::new(cmd.vx, cmd.vy), state.pose.yaw);
    let u_world = Vec3::new(horizontal.x, horizontal.y, cmd.vz);

    let velocity = state.velocity + (u_world - state.velocity) * alpha;
    let yaw_rate = state.yaw_rate + (cmd.vyaw - state.yaw_rate) * alpha;
    VehicleState {
        pose: Pose::new(
            state.pose.position + velocity * dt,
            state.pose.yaw + yaw_rate * dt,
        ),
        velocity,
        yaw_rate,
    }
}

/// Per-axis variances of the pose estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisVariance {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl AxisVariance {
    pub fn uniform(v: f64) -> Self {
        Self {
            x: v,
            y: v,
            z: v,
            yaw: v,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.yaw]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub pose: Pose,
    pub variance: AxisVariance,
    pub vision_available: bool,
}

impl EstimatorState {
    pub fn new(pose: Pose, initial_variance: f64) -> Self {
        Self {
            pose,
            variance: AxisVariance::uniform(initial_variance),
            vision_available: true,
        }
    }
}

/// Measurement variances of a vision pose fix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVariance {
    pub position: f64,
    pub yaw: f64,
}

/// Dead-reckons the estimate along the commanded velocity and inflates each
/// axis variance by `q * dt`.
pub fn predict(
    est: &EstimatorState,
    cmd: &ControlCommand,
    dt: f64,
    params: &VehicleParams,
) -> EstimatorState {
    if dt <= 0.0 {
        return *est;
    }
    let h = rotate_body_to_world(Vec2::new(cmd.vx, cmd.vy), est.pose.yaw);
    let delta = Vec3::new(h.x, h.y, cmd.vz) * dt;
    let v = est.variance;
    let dq = params.q_position * dt;
    EstimatorState {
        pose: Pose::new(est.pose.position + delta, est.pose.yaw + cmd.vyaw * dt),
        variance: AxisVariance {
            x: v.x + dq,
            y: v.y + dq,
            z: v.z + dq,
            yaw: v.yaw + params.q_yaw * dt,
        },
        vision_available: est.vision_available,
    }
}

/// Scalar Kalman correction on each axis; the yaw innovation is wrapped.
pub fn update(est: &EstimatorState, measured: &Pose, r: &MeasurementVariance) -> EstimatorState {
    fn fuse(value: f64, p: f64, innovation: f64, r: f64) -> (f64, f64) {
        let k = p / (p + r);
        (value + k * innovation, (1.0 - k) * p)
    }
    let e = &est.pose.position;
    let m = &measured.position;
    let (x, px) = fuse(e.x, est.variance.x, m.x - e.x, r.position);
    let (y, py) = fuse(e.y, est.variance.y, m.y - e.y, r.position);
    let (z, pz) = fuse(e.z, est.variance.z, m.z - e.z, r.position);
    let (yaw, pyaw) = fuse(
        est.pose.yaw,
        est.variance.yaw,
        wrap_angle(measured.yaw - est.pose.yaw),
        r.yaw,
    );
    EstimatorState {
        pose: Pose::new(Vec3::new(x, y, z), yaw),
        variance: AxisVariance {
            x: px,
            y: py,
            z: pz,
            yaw: pyaw,
        },
        vision_available: true,
    }
}

/// Whether the visual tracker holds lock this tick.
pub fn vision_gate(state: &VehicleState, visible_count: usize, params: &VehicleParams) -> bool {
    state.yaw_rate.abs() <= params.yaw_loss_threshold && visible_count >= params.min_tracked_points
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::gaussian;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Distribution;

    fn cmd(vx: f64, vy: f64, vz: f64, vyaw: f64) -> ControlCommand {
        ControlCommand { vx, vy, vz, vyaw }
    }

    #[test]
    fn plant_at_rest_stays() {
        let p = VehicleParams::default();
        let s = VehicleState::at_rest(Pose::new(Vec3::new(1.0, 2.0, 3.0), 0.4));
        assert_eq!(
            step_dynamics(&s, &ControlCommand::zero(), 1.0 / 30.0, &p),
            s
        );
        assert_eq!(step_dynamics(&s, &cmd(1.0, 1.0, 1.0, 1.0), 0.0, &p), s);
    }

    #[test]
    fn lag_settles_within_five_tau() {
        let p = VehicleParams::default();
        let dt = 1.0 / 30.0;
        let u = cmd(0.8, -0.3, 0.2, 0.0);
        let mut s = VehicleState::at_rest(Pose::new(Vec3::zeros(), 0.0));
        let ticks = (5.0 * p.tau / dt).round() as usize;
        for _ in 0..ticks {
            s = step_dynamics(&s, &u, dt, &p);
        }
        let target = Vec3::new(0.8, -0.3, 0.2);
        // continuous-time oracle: |v - u| = |u| exp(-5)
        assert!((s.velocity - target).norm() < 0.01 * target.norm());
        assert!((-5.0f64).exp() < 0.01);
    }

    #[test]
    fn body_command_rotates_with_yaw() {
        let p = VehicleParams {
            tau: 1e-9,
            ..VehicleParams::default()
        };
        let s = VehicleState::at_rest(Pose::new(Vec3::zeros(), std::f64::consts::FRAC_PI_2));
        // body +y (forward) at yaw 90° is world -x
        let n = step_dynamics(&s, &cmd(0.0, 1.0, 0.0, 0.0), 1.0, &p);
        assert!((n.velocity - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn predict_examples() {
        let p = VehicleParams::default();
        let est = EstimatorState::new(Pose::new(Vec3::new(1.0, 1.0, 1.0), 0.0), 0.02);
        assert_eq!(predict(&est, &cmd(1.0, 0.0, 0.0, 0.0), 0.0, &p), est);

        let dt = 1.0 / 30.0;
        let mut e = est;
        for _ in 0..150 {
            e = predict(&e, &ControlCommand::zero(), dt, &p);
        }
        assert_eq!(e.pose, est.pose);
        assert!((e.variance.x - est.variance.x - 0.05).abs() < 1e-12);
        assert!((e.variance.yaw - est.variance.yaw - 0.05).abs() < 1e-12);
    }

    #[test]
    fn update_examples() {
        let truth = Pose::new(Vec3::new(2.0, -1.0, 0.5), 0.3);
        let est = EstimatorState::new(Pose::new(Vec3::zeros(), 0.0), 0.04);
        let sharp = MeasurementVariance {
            position: 1e-12,
            yaw: 1e-12,
        };
        let e = update(&est, &truth, &sharp);
        assert!((e.pose.position - truth.position).norm() < 1e-9);
        assert!((e.pose.yaw - truth.yaw).abs() < 1e-9);

        let even = MeasurementVariance {
            position: 0.04,
            yaw: 0.04,
        };
        let e = update(&est, &truth, &even);
        assert!((e.pose.position - truth.position / 2.0).norm() < 1e-12);
        assert!((e.pose.yaw - 0.15).abs() < 1e-12);
        assert!((e.variance.x - 0.02).abs() < 1e-15);
    }

    #[test]
    fn yaw_innovation_wraps() {
        let est = EstimatorState::new(Pose::new(Vec3::zeros(), 3.1), 1.0);
        let measured = Pose::new(Vec3::zeros(), -3.1);
        let r = MeasurementVariance {
            position: 1.0,
            yaw: 1.0,
        };
        let e = update(&est, &measured, &r);
        // midpoint across the ±π seam, not through zero
        assert!(e.pose.yaw.abs() > 3.1);
    }

    #[test]
    fn stationary_updates_reduce_error() {
        let sigma = 0.05;
        let r = MeasurementVariance {
            position: sigma * sigma,
            yaw: sigma * sigma,
        };
        let checkpoints = [1usize, 4, 16, 64];
        let mut mean_abs = [0.0; 4];
        let truth = Pose::new(Vec3::new(0.3, 0.2, 1.0), 0.0);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = gaussian(sigma).unwrap();
            let mut est = EstimatorState::new(Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0), 0.25);
            for k in 1..=64 {
                let mut m = truth;
                m.position.x += noise.sample(&mut rng);
                est = update(&est, &m, &r);
                if let Some(i) = checkpoints.iter().position(|&c| c == k) {
                    mean_abs[i] += (est.pose.position.x - truth.position.x).abs() / 100.0;
                }
            }
        }
        // scalar Kalman oracle: stationary posterior std after k fixes ~ sigma / sqrt(k)
        assert!(mean_abs.windows(2).all(|w| w[1] <= w[0]), "{mean_abs:?}");
        assert!(mean_abs[3] < 2.0 * sigma / 8.0);
    }

    #[test]
    fn gate() {
        let p = VehicleParams::default();
        let mut s = VehicleState::at_rest(Pose::new(Vec3::zeros(), 0.0));
        assert!(vision_gate(&s, 100, &p));
        assert!(!vision_gate(&s, 14, &p));
        assert!(vision_gate(&s, 15, &p));
        s.yaw_rate = -0.6;
        assert!(!vision_gate(&s, 100, &p));
    }
}
