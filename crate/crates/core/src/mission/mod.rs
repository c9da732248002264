//! Mission orchestration: a single-threaded, fixed-tick loop driving the
//! pipeline Idle → Mapping → Detecting → Orbiting → Reconstructing → Done,
//! with any stage failure ending in Aborted.

mod config;
mod report;
mod state;

pub use config::{DropoutWindow, MappingConfig, MissionConfig, NoiseConfig, OrbitConfig};
pub use report::{
    emit_report, DetectionSummary, LogEvent, MissionReport, OrbitSummary, StateDuration,
    TrackingSummary,
};
pub use state::{transition, AbortReason, MissionEvent, MissionState};

use crate::capture::{CameraFrame, CaptureBundle, CaptureError, CaptureSet, FrameBuffer};
use crate::controller::{control_step, waypoint_reached, ControlCommand};
use crate::detector::{detect, DetectError};
use crate::geometry::{Pose, Vec3};
use crate::planner::{plan_orbit, OrbitPlan, PlanError};
use crate::reconstructor::{
    export_ply, reconstruct, score, DenseCloud, ReconstructError, ReconstructionMode,
};
use crate::simworld::{
    gaussian, generate_scene, observe, render_observations, Scene, SparseMapFrame,
};
use crate::vehicle::{
    predict, step_dynamics, update, vision_gate, AxisVariance, EstimatorState, MeasurementVariance,
    VehicleState,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

pub const DENSE_PLY: &str = "dense.ply";
pub const SPARSE_PLY: &str = "sparse.ply";
pub const CAPTURE_BUNDLE: &str = "captures.json";

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("illegal transition from {state} on {event}")]
    IllegalTransition { state: String, event: String },
    #[error("invalid mission config: {0}")]
    Config(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// One control tick as seen by the orchestrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t: f64,
    pub state: &'static str,
    pub truth: Pose,
    pub estimate: Pose,
    pub variance: AxisVariance,
    pub vision: bool,
    pub command: ControlCommand,
}

/// Everything a mission produced, including the in-memory artifacts that
/// the report only summarizes.
#[derive(Debug, Clone)]
pub struct MissionRun {
    pub report: MissionReport,
    pub scene: Option<Scene>,
    pub plan: Option<OrbitPlan>,
    pub captures: CaptureSet,
    pub sparse: Option<DenseCloud>,
    pub dense: Option<DenseCloud>,
    pub telemetry: Vec<TickRecord>,
}

/// Runs a mission without writing any files.
pub fn run(config: &MissionConfig) -> MissionReport {
    Mission::new(config).execute(None).report
}

/// Runs a mission; when `out_dir` is given, writes the point clouds and the
/// capture bundle there (the report itself is written by [`emit_report`]).
pub fn run_with_output(config: &MissionConfig, out_dir: Option<&Path>) -> MissionRun {
    Mission::new(config).execute(out_dir)
}

struct Mission<'a> {
    config: &'a MissionConfig,
    rng: ChaCha8Rng,
    state: MissionState,
    tick: u64,
    state_entered: u64,
    truth: VehicleState,
    estimate: EstimatorState,
    /// Accumulated map: running sum and count of estimates per id.
    map: BTreeMap<u32, (Vec3, u32)>,
    frames_published: u64,
    buffer: FrameBuffer,
    captures: CaptureSet,
    report: MissionReport,
    telemetry: Vec<TickRecord>,
}

impl<'a> Mission<'a> {
    fn new(config: &'a MissionConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // scene sampling uses stream 0 of the same seed
        rng.set_stream(1);
        let pose = Pose::new(config.initial_pose.position, config.initial_pose.yaw);
        Self {
            config,
            rng,
            state: MissionState::Idle,
            tick: 0,
            state_entered: 0,
            truth: VehicleState::at_rest(pose),
            estimate: EstimatorState::new(pose, config.vehicle.initial_variance),
            map: BTreeMap::new(),
            frames_published: 0,
            buffer: FrameBuffer::new(),
            captures: CaptureSet::default(),
            report: MissionReport::new(config.seed),
            telemetry: Vec::new(),
        }
    }

    fn now(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    fn in_state(&self) -> f64 {
        (self.tick - self.state_entered) as f64 * self.config.dt
    }

    fn log(&mut self, message: impl Into<String>) {
        let event = LogEvent {
            t: self.now(),
            state: self.state.to_string(),
            message: message.into(),
        };
        self.report.events.push(event);
    }

    fn fire(&mut self, event: MissionEvent) {
        let next = match transition(&self.state, &event) {
            Ok(next) => next,
            Err(e) => MissionState::Aborted(AbortReason::Failure(e.to_string())),
        };
        if next.name() != self.state.name() || next.is_terminal() {
            self.report.state_durations.push(StateDuration {
                state: self.state.name().to_string(),
                seconds: self.in_state(),
            });
            self.state_entered = self.tick;
        }
        let from = self.state.to_string();
        self.state = next;
        let to = self.state.to_string();
        self.log(format!("{from} -> {to}"));
    }

    fn abort(&mut self, reason: AbortReason) {
        self.fire(MissionEvent::Abort(reason));
    }

    fn execute(mut self, out_dir: Option<&Path>) -> MissionRun {
        let mut run = MissionRun {
            report: MissionReport::new(self.config.seed),
            scene: None,
            plan: None,
            captures: CaptureSet::default(),
            sparse: None,
            dense: None,
            telemetry: Vec::new(),
        };
        self.fire(MissionEvent::Start);

        let scene = match generate_scene(&self.config.scene, self.config.seed) {
            Ok(s) => s,
            Err(e) => {
                self.abort(AbortReason::Failure(e.to_string()));
                return self.finish(run);
            }
        };
        self.log(format!(
            "scene: {} points, {} objects",
            scene.points.len(),
            scene.objects.len()
        ));

        let map_frame = self.map_environment(&scene);
        if let Some(plan) = self.detect_and_plan(&scene, &map_frame) {
            if self.fly_orbit(&scene, &plan) {
                let (sparse, dense) = self.reconstruct(&scene, &map_frame, out_dir);
                run.sparse = sparse;
                run.dense = dense;
            }
            run.plan = Some(plan);
        }
        run.scene = Some(scene);
        self.finish(run)
    }

    fn finish(mut self, mut run: MissionRun) -> MissionRun {
        self.report.final_state = self.state.to_string();
        self.report.abort_reason = match &self.state {
            MissionState::Aborted(r) => Some(r.to_string()),
            _ => None,
        };
        self.report.total_seconds = self.now();
        self.report.captures = self.captures.len();
        self.report.duplicate_captures = self
            .captures
            .frames
            .iter()
            .filter(|f| f.duplicate_of_latest)
            .count();
        run.report = self.report;
        run.captures = self.captures;
        run.telemetry = self.telemetry;
        run
    }

    /// Publishes a map frame, fuses vision and, while orbiting, refreshes the
    /// camera buffer.
    fn sense(&mut self, scene: &Scene, render: bool) {
        let cfg = self.config;
        let truth_pose = self.truth.pose;
        let frame = observe(
            scene,
            &truth_pose,
            &cfg.camera,
            cfg.noise.map_sigma,
            self.frames_published,
            &mut self.rng,
        );
        self.frames_published += 1;
        for (id, p) in &frame.points {
            let entry = self.map.entry(*id).or_insert((Vec3::zeros(), 0));
            entry.0 += p;
            entry.1 += 1;
        }

        let tracking = vision_gate(&self.truth, frame.points.len(), &cfg.vehicle)
            && !cfg.vision_blocked(self.now());
        if tracking {
            let measured = self.vision_fix(&truth_pose);
            let r = MeasurementVariance {
                position: cfg.noise.vision_position_sigma.powi(2).max(1e-12),
                yaw: cfg.noise.vision_yaw_sigma.powi(2).max(1e-12),
            };
            self.estimate = update(&self.estimate, &measured, &r);
        } else {
            self.estimate.vision_available = false;
            self.report.tracking.dropout_ticks += 1;
        }

        if render {
            let observations = render_observations(
                scene,
                &truth_pose,
                &cfg.camera,
                cfg.noise.pixel_sigma,
                &mut self.rng,
            );
            self.buffer.on_frame(CameraFrame {
                observations,
                pose_estimate: self.estimate.pose,
                pose_truth: Some(truth_pose),
            });
        }
    }

    fn vision_fix(&mut self, truth: &Pose) -> Pose {
        let mut p = truth.position;
        if let Some(n) = gaussian(self.config.noise.vision_position_sigma) {
            for k in 0..3 {
                p[k] += n.sample(&mut self.rng);
            }
        }
        let mut yaw = truth.yaw;
        if let Some(n) = gaussian(self.config.noise.vision_yaw_sigma) {
            yaw += n.sample(&mut self.rng);
        }
        Pose::new(p, yaw)
    }

    /// Applies `cmd` to both the plant and the estimator and advances time.
    fn act(&mut self, cmd: ControlCommand) {
        let cfg = self.config;
        self.telemetry.push(TickRecord {
            tick: self.tick,
            t: self.now(),
            state: self.state.name(),
            truth: self.truth.pose,
            estimate: self.estimate.pose,
            variance: self.estimate.variance,
            vision: self.estimate.vision_available,
            command: cmd,
        });
        let err = (self.estimate.pose.position - self.truth.pose.position).norm();
        let t = &mut self.report.tracking;
        t.max_position_estimate_error = t.max_position_estimate_error.max(err);

        self.estimate = predict(&self.estimate, &cmd, cfg.dt, &cfg.vehicle);
        self.truth = step_dynamics(&self.truth, &cmd, cfg.dt, &cfg.vehicle);
        self.tick += 1;
    }

    fn map_frame(&self) -> SparseMapFrame {
        SparseMapFrame {
            points: self
                .map
                .iter()
                .map(|(id, (sum, n))| (*id, sum / *n as f64))
                .collect(),
            drone_pose: self.estimate.pose,
            frame_index: self.frames_published,
        }
    }

    fn map_environment(&mut self, scene: &Scene) -> SparseMapFrame {
        let cfg = self.config;
        loop {
            if self.in_state() >= cfg.mapping.timeout {
                self.log(format!("mapping timeout with {} points", self.map.len()));
                break;
            }
            self.sense(scene, false);
            self.act(ControlCommand::zero());
            if self.map.len() >= cfg.mapping.min_map_points {
                break;
            }
        }
        self.log(format!(
            "map ready: {} points from {} frames",
            self.map.len(),
            self.frames_published
        ));
        self.fire(MissionEvent::MapReady);
        self.map_frame()
    }

    fn detect_and_plan(&mut self, scene: &Scene, frame: &SparseMapFrame) -> Option<OrbitPlan> {
        let cfg = self.config;
        let detection = match detect(frame, &cfg.detector) {
            Ok(d) => d,
            Err(e) => {
                self.log(e.to_string());
                self.abort(match e {
                    DetectError::EmptyFrame => AbortReason::EmptyFrame,
                    DetectError::NoTarget => AbortReason::NoTarget,
                    DetectError::InvalidParams(m) => AbortReason::Failure(m),
                });
                return None;
            }
        };
        let truth = scene.objects.iter().map(|o| o.centroid).min_by(|a, b| {
            (a - detection.target)
                .norm()
                .total_cmp(&(b - detection.target).norm())
        });
        let summary = DetectionSummary {
            target: detection.target,
            nearest_true_centroid: truth,
            error: truth.map(|c| (c - detection.target).norm()),
            members: detection.members.len(),
            filtered_points: detection.filtered.len(),
            clusters: detection.clusters.clusters.len(),
        };
        self.log(format!(
            "target at ({:.3}, {:.3}, {:.3}) from {} points in {} clusters",
            summary.target.x, summary.target.y, summary.target.z, summary.members, summary.clusters
        ));
        self.report.detection = Some(summary);

        let pose = self.estimate.pose;
        let radius = (pose.position.xy() - detection.target.xy()).norm();
        let n = cfg.planner.waypoint_count(radius);
        match plan_orbit(
            &detection.target,
            &pose,
            n,
            cfg.planner.direction,
            cfg.planner.min_radius,
        ) {
            Ok(plan) => {
                self.report.orbit = Some(OrbitSummary {
                    center: plan.center,
                    radius: plan.radius,
                    altitude: plan.altitude,
                    waypoints: plan.waypoints.len(),
                });
                self.fire(MissionEvent::TargetFound {
                    waypoints: plan.waypoints.len(),
                });
                Some(plan)
            }
            Err(e) => {
                self.log(e.to_string());
                self.abort(match e {
                    PlanError::DegenerateOrbit { .. } => AbortReason::DegenerateOrbit,
                    PlanError::TooFewWaypoints(_) => AbortReason::Failure(e.to_string()),
                });
                None
            }
        }
    }

    /// Returns true once every waypoint is captured.
    fn fly_orbit(&mut self, scene: &Scene, plan: &OrbitPlan) -> bool {
        let cfg = self.config;
        loop {
            let MissionState::Orbiting { waypoint, .. } = self.state else {
                return self.state == MissionState::Reconstructing;
            };
            if self.in_state() >= cfg.orbit.timeout {
                self.log(format!("orbit timeout before waypoint {waypoint}"));
                self.abort(AbortReason::OrbitTimeout);
                return false;
            }
            self.sense(scene, true);

            let target = plan.waypoints[waypoint].pose;
            if waypoint_reached(&target, &self.estimate.pose, &cfg.tolerances) {
                if let Err(e) = self
                    .buffer
                    .on_waypoint_reached(&mut self.captures, waypoint)
                {
                    self.log(e.to_string());
                    self.abort(match e {
                        CaptureError::NoFrameAvailable(_) => AbortReason::NoFrameAvailable,
                        other => AbortReason::Failure(other.to_string()),
                    });
                    return false;
                }
                self.report.waypoints_reached += 1;
                self.log(format!("waypoint {waypoint} reached, image captured"));
                self.fire(MissionEvent::WaypointReached);
                continue;
            }

            let cmd = control_step(&target, &self.estimate.pose, &cfg.gains, &cfg.bounds);
            let t = &mut self.report.tracking;
            t.max_commanded_yaw_rate = t.max_commanded_yaw_rate.max(cmd.vyaw.abs());
            if cmd.vyaw.abs() > cfg.bounds.vyaw {
                t.yaw_clamp_violations += 1;
            }
            self.act(cmd);
        }
    }

    fn reconstruct(
        &mut self,
        scene: &Scene,
        map: &SparseMapFrame,
        out_dir: Option<&Path>,
    ) -> (Option<DenseCloud>, Option<DenseCloud>) {
        let cfg = self.config;
        let map_ids: BTreeSet<u32> = map.points.iter().map(|(id, _)| *id).collect();
        let abort_on = |e: &ReconstructError| match e {
            ReconstructError::InsufficientViews(_) => AbortReason::InsufficientViews,
            ReconstructError::EmptyReconstruction => AbortReason::EmptyReconstruction,
            other => AbortReason::Failure(other.to_string()),
        };

        let sparse = match reconstruct(
            &self.captures,
            &cfg.camera,
            &ReconstructionMode::Sparse(map_ids.clone()),
            &cfg.reconstruct,
        ) {
            Ok(c) => c,
            Err(e) => {
                self.log(e.to_string());
                self.abort(abort_on(&e));
                return (None, None);
            }
        };
        self.log(format!(
            "sparse reconstruction: {} points",
            sparse.points.len()
        ));
        let dense = match reconstruct(
            &self.captures,
            &cfg.camera,
            &ReconstructionMode::Dense,
            &cfg.reconstruct,
        ) {
            Ok(c) => c,
            Err(e) => {
                self.log(e.to_string());
                self.abort(abort_on(&e));
                return (Some(sparse), None);
            }
        };
        self.log(format!(
            "dense reconstruction: {} points",
            dense.points.len()
        ));
        let quality = score(&dense, scene);
        self.report.sparse_points = Some(sparse.points.len());
        self.report.reconstruction = Some(quality);

        if let Some(dir) = out_dir {
            let written = std::fs::create_dir_all(dir)
                .map_err(ReconstructError::from)
                .and_then(|_| export_ply(&sparse, &dir.join(SPARSE_PLY)))
                .and_then(|_| export_ply(&dense, &dir.join(DENSE_PLY)));
            let bundle = CaptureBundle {
                camera: cfg.camera,
                frames: self.captures.frames.clone(),
                sparse_map_ids: Some(map_ids.into_iter().collect()),
                ground_truth: Some(scene.clone()),
            };
            let bundled = bundle.save(&dir.join(CAPTURE_BUNDLE));
            match (written, bundled) {
                (Ok(()), Ok(())) => {
                    self.report.ply_path = Some(DENSE_PLY.to_string());
                    self.report.capture_bundle = Some(CAPTURE_BUNDLE.to_string());
                }
                (Err(e), _) => {
                    self.abort(AbortReason::Failure(e.to_string()));
                    return (Some(sparse), Some(dense));
                }
                (_, Err(e)) => {
                    self.abort(AbortReason::Failure(e.to_string()));
                    return (Some(sparse), Some(dense));
                }
            }
        }
        self.fire(MissionEvent::ReconstructionComplete);
        (Some(sparse), Some(dense))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::BackgroundSpec;

    #[test]
    fn default_mission_completes() {
        let r = run(&MissionConfig::default());
        assert_eq!(r.final_state, "Done", "{:#?}", r.events);
        assert_eq!(r.waypoints_reached, 12);
        assert_eq!(r.captures, 12);
    }

    #[test]
    fn no_objects_aborts_without_target() {
        let mut c = MissionConfig::default();
        c.scene.objects.clear();
        let r = run(&c);
        assert_eq!(r.final_state, "Aborted(NoTarget)");
        assert_eq!(r.abort_reason.as_deref(), Some("NoTarget"));
    }

    #[test]
    fn zero_orbit_timeout() {
        let mut c = MissionConfig::default();
        c.orbit.timeout = 0.0;
        assert_eq!(run(&c).final_state, "Aborted(OrbitTimeout)");
    }

    #[test]
    fn empty_world_aborts_with_empty_frame() {
        let mut c = MissionConfig::default();
        c.scene.objects.clear();
        c.scene.background = BackgroundSpec {
            count: 0,
            min: Vec3::zeros(),
            max: Vec3::zeros(),
        };
        let r = run(&c);
        assert_eq!(r.final_state, "Aborted(EmptyFrame)");
        // mapping ran to its timeout
        assert!((r.state_durations[1].seconds - c.mapping.timeout).abs() < 1e-9);
    }

    #[test]
    fn state_sequence_is_prefix_of_pipeline() {
        let order = [
            "Idle",
            "Mapping",
            "Detecting",
            "Orbiting",
            "Reconstructing",
            "Done",
        ];
        for cfg in [MissionConfig::default(), {
            let mut c = MissionConfig::default();
            c.orbit.timeout = 5.0;
            c
        }] {
            let r = run(&cfg);
            let visited: Vec<&str> = r.state_durations.iter().map(|s| s.state.as_str()).collect();
            for (i, s) in visited.iter().enumerate() {
                assert_eq!(*s, order[i]);
            }
        }
    }
}
