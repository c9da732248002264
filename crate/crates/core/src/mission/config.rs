use crate::controller::{CommandBounds, Gains, Tolerances};
use crate::detector::DetectorParams;
use crate::geometry::{CameraIntrinsics, Pose, Vec3};
use crate::planner::PlannerParams;
use crate::reconstructor::ReconstructParams;
use crate::simworld::SceneSpec;
use crate::vehicle::VehicleParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::MissionError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Sparse-map point noise, meters.
    pub map_sigma: f64,
    /// Image measurement noise, pixels.
    pub pixel_sigma: f64,
    /// Vision pose fix noise on x, y, z, meters.
    pub vision_position_sigma: f64,
    /// Vision pose fix noise on yaw, radians.
    pub vision_yaw_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            map_sigma: 0.02,
            pixel_sigma: 0.5,
            vision_position_sigma: 0.01,
            vision_yaw_sigma: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingConfig {
    /// Detection starts once the map holds this many distinct points...
    pub min_map_points: usize,
    /// ...or after this many simulated seconds.
    pub timeout: f64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            min_map_points: 300,
            timeout: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitConfig {
    /// Abort the orbit after this many simulated seconds.
    pub timeout: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self { timeout: 100.0 }
    }
}

/// Interval during which vision fixes are withheld regardless of tracking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutWindow {
    pub start: f64,
    pub duration: f64,
}

impl DropoutWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub seed: u64,
    /// Control tick, seconds.
    pub dt: f64,
    pub initial_pose: Pose,
    pub scene: SceneSpec,
    pub camera: CameraIntrinsics,
    pub noise: NoiseConfig,
    pub vehicle: VehicleParams,
    pub detector: DetectorParams,
    pub planner: PlannerParams,
    pub gains: Gains,
    pub bounds: CommandBounds,
    pub tolerances: Tolerances,
    pub reconstruct: ReconstructParams,
    pub mapping: MappingConfig,
    pub orbit: OrbitConfig,
    pub dropouts: Vec<DropoutWindow>,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            dt: 1.0 / 30.0,
            initial_pose: Pose::new(Vec3::new(0.0, 0.0, 1.0), 0.0),
            scene: SceneSpec::default(),
            camera: CameraIntrinsics::default(),
            noise: NoiseConfig::default(),
            vehicle: VehicleParams::default(),
            detector: DetectorParams::default(),
            planner: PlannerParams::default(),
            gains: Gains::default(),
            bounds: CommandBounds::default(),
            tolerances: Tolerances::default(),
            reconstruct: ReconstructParams::default(),
            mapping: MappingConfig::default(),
            orbit: OrbitConfig::default(),
            dropouts: Vec::new(),
        }
    }
}

impl MissionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, MissionError> {
        let config: Self = toml::from_str(text).map_err(|e| MissionError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, MissionError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, MissionError> {
        toml::to_string_pretty(self).map_err(|e| MissionError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |msg: &str| Err(MissionError::Config(msg.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !self.initial_pose.position.iter().all(|v| v.is_finite())
            || !self.initial_pose.yaw.is_finite()
        {
            return bad("initial_pose must be finite");
        }
        self.camera
            .validate()
            .map_err(|e| MissionError::Config(e.to_string()))?;
        let n = &self.noise;
        if [
            n.map_sigma,
            n.pixel_sigma,
            n.vision_position_sigma,
            n.vision_yaw_sigma,
        ]
        .iter()
        .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return bad("noise levels must be finite and >= 0");
        }
        let v = &self.vehicle;
        if !(v.tau > 0.0) || v.q_position < 0.0 || v.q_yaw < 0.0 || !(v.initial_variance >= 0.0) {
            return bad("vehicle: tau > 0 and non-negative variances required");
        }
        let d = &self.detector;
        if !(d.filter.keep_fraction > 0.0 && d.filter.keep_fraction <= 1.0) {
            return bad("detector.filter.keep_fraction must be in (0, 1]");
        }
        if !(d.dbscan.eps > 0.0) || d.dbscan.min_points < 1 {
            return bad("detector.dbscan: eps > 0 and min_points >= 1 required");
        }
        if self.planner.spacing.is_none() && self.planner.waypoints < 2 {
            return bad("planner.waypoints must be >= 2");
        }
        if self.planner.spacing.is_some_and(|s| !(s > 0.0)) {
            return bad("planner.spacing must be > 0");
        }
        self.gains.validate().map_err(MissionError::Config)?;
        let b = &self.bounds;
        if [b.vx, b.vy, b.vz, b.vyaw].iter().any(|x| !(*x > 0.0)) {
            return bad("command bounds must be > 0");
        }
        if !(self.tolerances.pos_tol > 0.0 && self.tolerances.yaw_tol > 0.0) {
            return bad("tolerances must be > 0");
        }
        if self.reconstruct.overlap_min < 1 {
            return bad("reconstruct.overlap_min must be >= 1");
        }
        if !(self.mapping.timeout >= 0.0) || !(self.orbit.timeout >= 0.0) {
            return bad("timeouts must be >= 0");
        }
        Ok(())
    }

    pub fn vision_blocked(&self, t: f64) -> bool {
        self.dropouts.iter().any(|w| w.contains(t))
    }
}
