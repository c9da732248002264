//! Latest-frame buffering and waypoint-triggered image capture.

use crate::geometry::{CameraIntrinsics, Pose};
use crate::simworld::{Observation, Scene};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("waypoint {0} reached before any camera frame arrived")]
    NoFrameAvailable(usize),
    #[error("waypoint {0} was already captured")]
    DuplicateWaypoint(usize),
    #[error("capture bundle i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("capture bundle format: {0}")]
    Format(#[from] serde_json::Error),
}

/// A camera image as delivered by the driver, before any waypoint event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFrame {
    pub observations: Vec<Observation>,
    pub pose_estimate: Pose,
    pub pose_truth: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureFrame {
    pub waypoint_index: usize,
    pub pose_estimate: Pose,
    /// Ground-truth camera pose; only read in oracle-pose reconstruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_truth: Option<Pose>,
    /// Set when no new image arrived since the previous capture and the
    /// previous image was saved again.
    #[serde(default)]
    pub duplicate_of_latest: bool,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CaptureSet {
    pub frames: Vec<CaptureFrame>,
}

impl CaptureSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Holds the newest camera frame.
#[derive(Debug, Clone, Default)]
pub struct FrameBuffer {
    latest: Option<CameraFrame>,
    fresh: bool,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn latest(&self) -> Option<&CameraFrame> {
        self.latest.as_ref()
    }

    pub fn on_frame(&mut self, frame: CameraFrame) {
        self.latest = Some(frame);
        self.fresh = true;
    }

    /// Saves the buffered frame into `set` stamped with `waypoint_index`.
    pub fn on_waypoint_reached(
        &mut self,
        set: &mut CaptureSet,
        waypoint_index: usize,
    ) -> Result<(), CaptureError> {
        let frame = self
            .latest
            .as_ref()
            .ok_or(CaptureError::NoFrameAvailable(waypoint_index))?;
        if set
            .frames
            .iter()
            .any(|f| f.waypoint_index == waypoint_index)
        {
            return Err(CaptureError::DuplicateWaypoint(waypoint_index));
        }
        set.frames.push(CaptureFrame {
            waypoint_index,
            pose_estimate: frame.pose_estimate,
            pose_truth: frame.pose_truth,
            duplicate_of_latest: !self.fresh,
            observations: frame.observations.clone(),
        });
        set.frames.sort_by_key(|f| f.waypoint_index);
        self.fresh = false;
        Ok(())
    }
}

pub fn ready_for_reconstruction(set: &CaptureSet) -> bool {
    set.frames.len() >= 2
}

/// On-disk capture bundle: everything the reconstruction stage consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureBundle {
    pub camera: CameraIntrinsics,
    pub frames: Vec<CaptureFrame>,
    /// Ids present in the sparse map at capture time; enables sparse mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse_map_ids: Option<Vec<u32>>,
    /// Simulation ground truth, used only for scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Scene>,
}

impl CaptureBundle {
    pub fn capture_set(&self) -> CaptureSet {
        CaptureSet {
            frames: self.frames.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String, CaptureError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CaptureError> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CaptureError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Vec2, Vec3};

    fn frame(tag: u32) -> CameraFrame {
        CameraFrame {
            observations: vec![Observation {
                point_id: tag,
                pixel: Vec2::new(10.0, 20.0),
            }],
            pose_estimate: Pose::new(Vec3::new(tag as f64, 0.0, 1.0), 0.0),
            pose_truth: None,
        }
    }

    #[test]
    fn buffer_keeps_latest() {
        let mut b = FrameBuffer::new();
        assert!(b.latest().is_none());
        b.on_frame(frame(1));
        assert_eq!(b.latest(), Some(&frame(1)));
        b.on_frame(frame(2));
        assert_eq!(b.latest(), Some(&frame(2)));
    }

    #[test]
    fn capture_fresh_and_duplicate() {
        let mut b = FrameBuffer::new();
        let mut set = CaptureSet::default();
        b.on_frame(frame(1));
        b.on_waypoint_reached(&mut set, 0).unwrap();
        assert!(!set.frames[0].duplicate_of_latest);
        b.on_waypoint_reached(&mut set, 1).unwrap();
        assert!(set.frames[1].duplicate_of_latest);
        assert_eq!(set.frames[1].observations, set.frames[0].observations);
        b.on_frame(frame(2));
        b.on_waypoint_reached(&mut set, 2).unwrap();
        assert!(!set.frames[2].duplicate_of_latest);
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn capture_without_frame_fails() {
        let mut b = FrameBuffer::new();
        let mut set = CaptureSet::default();
        assert!(matches!(
            b.on_waypoint_reached(&mut set, 0),
            Err(CaptureError::NoFrameAvailable(0))
        ));
        b.on_frame(frame(1));
        b.on_waypoint_reached(&mut set, 0).unwrap();
        assert!(matches!(
            b.on_waypoint_reached(&mut set, 0),
            Err(CaptureError::DuplicateWaypoint(0))
        ));
    }

    #[test]
    fn gate_needs_two() {
        let mut set = CaptureSet::default();
        assert!(!ready_for_reconstruction(&set));
        let mut b = FrameBuffer::new();
        b.on_frame(frame(1));
        b.on_waypoint_reached(&mut set, 0).unwrap();
        assert!(!ready_for_reconstruction(&set));
        b.on_waypoint_reached(&mut set, 1).unwrap();
        assert!(ready_for_reconstruction(&set));
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let mut b = FrameBuffer::new();
            let mut set = CaptureSet::default();
            for (i, ev) in [0, 1, 1, 0, 1, 0, 0, 1].iter().enumerate() {
                if *ev == 0 {
                    b.on_frame(frame(i as u32));
                } else {
                    b.on_waypoint_reached(&mut set, i).unwrap();
                }
            }
            set
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.len(), 4);
        assert_eq!(
            a.frames
                .iter()
                .map(|f| f.duplicate_of_latest)
                .collect::<Vec<_>>(),
            vec![false, true, false, false]
        );
    }

    #[test]
    fn bundle_file_round_trip() {
        let mut b = FrameBuffer::new();
        let mut set = CaptureSet::default();
        b.on_frame(frame(3));
        b.on_waypoint_reached(&mut set, 0).unwrap();
        let bundle = CaptureBundle {
            camera: CameraIntrinsics::default(),
            frames: set.frames,
            sparse_map_ids: Some(vec![3]),
            ground_truth: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("captures.json");
        bundle.save(&path).unwrap();
        assert_eq!(CaptureBundle::load(&path).unwrap(), bundle);
    }
}
