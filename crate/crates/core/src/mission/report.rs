use crate::geometry::Vec3;
use crate::reconstructor::QualityReport;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::MissionError;

pub const REPORT_FILE: &str = "report.json";
pub const EVENT_LOG_FILE: &str = "events.log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    /// Simulated seconds since start.
    pub t: f64,
    pub state: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDuration {
    pub state: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub target: Vec3,
    pub nearest_true_centroid: Option<Vec3>,
    pub error: Option<f64>,
    pub members: usize,
    pub filtered_points: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSummary {
    pub center: Vec3,
    pub radius: f64,
    pub altitude: f64,
    pub waypoints: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub dropout_ticks: u64,
    pub max_position_estimate_error: f64,
    pub max_commanded_yaw_rate: f64,
    pub yaw_clamp_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub final_state: String,
    pub abort_reason: Option<String>,
    pub seed: u64,
    pub total_seconds: f64,
    /// States in the order visited, with the simulated time spent in each.
    pub state_durations: Vec<StateDuration>,
    pub detection: Option<DetectionSummary>,
    pub orbit: Option<OrbitSummary>,
    pub waypoints_reached: usize,
    pub captures: usize,
    pub duplicate_captures: usize,
    pub tracking: TrackingSummary,
    pub sparse_points: Option<usize>,
    pub reconstruction: Option<QualityReport>,
    /// Relative to the output directory.
    pub ply_path: Option<String>,
    pub capture_bundle: Option<String>,
    pub events: Vec<LogEvent>,
}

impl MissionReport {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            final_state: String::new(),
            abort_reason: None,
            seed,
            total_seconds: 0.0,
            state_durations: Vec::new(),
            detection: None,
            orbit: None,
            waypoints_reached: 0,
            captures: 0,
            duplicate_captures: 0,
            tracking: TrackingSummary::default(),
            sparse_points: None,
            reconstruction: None,
            ply_path: None,
            capture_bundle: None,
            events: Vec::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.final_state == "Done"
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = writeln!(out, "{:>9.3} {:<24} {}", e.t, e.state, e.message);
        }
        out
    }
}

/// Writes `report.json` and `events.log` into `dir`.
pub fn emit_report(report: &MissionReport, dir: &Path) -> Result<(), MissionError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(REPORT_FILE), report.to_json())?;
    fs::write(dir.join(EVENT_LOG_FILE), report.event_log())?;
    Ok(())
}
