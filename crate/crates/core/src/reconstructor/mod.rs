//! Multi-view reconstruction of captured frames.
//!
//! Overlapping frames are found by shared point ids, every point seen in at
//! least two overlapping frames is triangulated from its undistorted rays,
//! and the result is scored against the simulation ground truth and
//! exported as PLY.

pub mod ply;

use crate::capture::{ready_for_reconstruction, CaptureSet};
use crate::geometry::{
    distort_pixel, triangulate_point, undistort_pixel, CameraIntrinsics, GeometryError, Pose, Vec2,
    Vec3,
};
use crate::simworld::Scene;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("reconstruction needs at least 2 captures, got {0}")]
    InsufficientViews(usize),
    #[error("no point has two usable views")]
    EmptyReconstruction,
    #[error("oracle poses requested but frame {0} carries no ground-truth pose")]
    MissingTruthPose(usize),
    #[error("ply export failed: {0}")]
    IoFailure(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapEdge {
    pub a: usize,
    pub b: usize,
    pub shared: usize,
}

/// Frames as nodes (indices into the capture set), edges between frames
/// sharing at least `overlap_min` point ids. Edges satisfy `a < b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<OverlapEdge>,
}

impl OverlapGraph {
    pub fn connected(&self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges.iter().any(|e| e.a == a && e.b == b)
    }
}

pub fn find_overlaps(set: &CaptureSet, overlap_min: usize) -> OverlapGraph {
    let overlap_min = overlap_min.max(1);
    let ids: Vec<BTreeSet<u32>> = set
        .frames
        .iter()
        .map(|f| f.observations.iter().map(|o| o.point_id).collect())
        .collect();
    let mut edges = Vec::new();
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let shared = ids[a].intersection(&ids[b]).count();
            if shared >= overlap_min {
                edges.push(OverlapEdge { a, b, shared });
            }
        }
    }
    OverlapGraph {
        nodes: (0..ids.len()).collect(),
        edges,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReconstructionMode {
    /// Only ids that made it into the live sparse map.
    Sparse(BTreeSet<u32>),
    /// Every observed id.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructParams {
    pub overlap_min: usize,
    /// Use ground-truth camera poses instead of the estimates.
    pub oracle_poses: bool,
}

impl Default for ReconstructParams {
    fn default() -> Self {
        Self {
            overlap_min: 10,
            oracle_poses: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub position: Vec3,
    pub point_id: u32,
    pub view_count: usize,
    /// RMS reprojection error over the views used, pixels.
    pub residual_px: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReconstructionStats {
    pub observed_ids: usize,
    pub reconstructed: usize,
    pub excluded_by_mode: usize,
    /// Seen in fewer than two overlapping frames.
    pub single_view: usize,
    pub degenerate: usize,
    pub undistort_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseCloud {
    /// Ascending by `point_id`.
    pub points: Vec<CloudPoint>,
    pub stats: ReconstructionStats,
}

impl DenseCloud {
    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }
}

pub fn reconstruct(
    set: &CaptureSet,
    cam: &CameraIntrinsics,
    mode: &ReconstructionMode,
    params: &ReconstructParams,
) -> Result<DenseCloud, ReconstructError> {
    if !ready_for_reconstruction(set) {
        return Err(ReconstructError::InsufficientViews(set.len()));
    }
    let poses: Vec<Pose> = set
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if params.oracle_poses {
                f.pose_truth.ok_or(ReconstructError::MissingTruthPose(i))
            } else {
                Ok(f.pose_estimate)
            }
        })
        .collect::<Result<_, _>>()?;
    let graph = find_overlaps(set, params.overlap_min);

    let mut tracks: BTreeMap<u32, Vec<(usize, Vec2)>> = BTreeMap::new();
    for (fi, frame) in set.frames.iter().enumerate() {
        for o in &frame.observations {
            tracks.entry(o.point_id).or_default().push((fi, o.pixel));
        }
    }

    let mut stats = ReconstructionStats {
        observed_ids: tracks.len(),
        ..Default::default()
    };
    let mut points = Vec::new();
    for (id, track) in &tracks {
        if let ReconstructionMode::Sparse(keep) = mode {
            if !keep.contains(id) {
                stats.excluded_by_mode += 1;
                continue;
            }
        }
        let usable: Vec<&(usize, Vec2)> = track
            .iter()
            .filter(|(f, _)| track.iter().any(|(g, _)| g != f && graph.connected(*f, *g)))
            .collect();
        if usable.len() < 2 {
            stats.single_view += 1;
            continue;
        }

        let mut views = Vec::with_capacity(usable.len());
        let mut pixels = Vec::with_capacity(usable.len());
        for (f, pixel) in usable {
            match undistort_pixel(*pixel, cam) {
                Ok(n) => {
                    views.push((poses[*f], n));
                    pixels.push(*pixel);
                }
                Err(_) => stats.undistort_failures += 1,
            }
        }
        let position = match triangulate_point(&views) {
            Ok(p) => p,
            Err(GeometryError::InsufficientViews(_)) => {
                stats.single_view += 1;
                continue;
            }
            Err(_) => {
                stats.degenerate += 1;
                continue;
            }
        };
        let Some(residual_px) = reprojection_rms(&position, &views, &pixels, cam) else {
            // behind at least one camera
            stats.degenerate += 1;
            continue;
        };
        points.push(CloudPoint {
            position,
            point_id: *id,
            view_count: views.len(),
            residual_px,
        });
    }
    stats.reconstructed = points.len();
    if points.is_empty() {
        return Err(ReconstructError::EmptyReconstruction);
    }
    Ok(DenseCloud { points, stats })
}

fn reprojection_rms(
    point: &Vec3,
    views: &[(Pose, Vec2)],
    pixels: &[Vec2],
    cam: &CameraIntrinsics,
) -> Option<f64> {
    let mut sum = 0.0;
    for ((pose, _), pixel) in views.iter().zip(pixels) {
        let n = pose.project_normalized(point)?;
        sum += (distort_pixel(n, cam) - pixel).norm_squared();
    }
    Some((sum / views.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub median: f64,
    pub rms: f64,
    pub max: f64,
}

impl ErrorSummary {
    fn of(mut errors: Vec<f64>) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        errors.sort_by(f64::total_cmp);
        let n = errors.len();
        let median = if n % 2 == 1 {
            errors[n / 2]
        } else {
            0.5 * (errors[n / 2 - 1] + errors[n / 2])
        };
        let rms = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
        Some(Self {
            median,
            rms,
            max: errors[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub object_points: usize,
    pub reconstructed_object_points: usize,
    /// Fraction of object points present in the cloud.
    pub completeness: f64,
    /// Error over reconstructed object points; absent when there are none.
    pub object_accuracy: Option<ErrorSummary>,
    /// Error over every reconstructed point, clutter included.
    pub overall_accuracy: Option<ErrorSummary>,
    pub reconstructed_points: usize,
    pub skipped_single_view: usize,
    pub degenerate: usize,
}

pub fn score(cloud: &DenseCloud, scene: &Scene) -> QualityReport {
    let object_ids: BTreeSet<u32> = scene.object_points().map(|p| p.id).collect();
    let mut object_errors = Vec::new();
    let mut all_errors = Vec::new();
    for p in &cloud.points {
        let Some(truth) = scene.point(p.point_id) else {
            continue;
        };
        let err = (p.position - truth.position).norm();
        all_errors.push(err);
        if object_ids.contains(&p.point_id) {
            object_errors.push(err);
        }
    }
    let reconstructed_object_points = object_errors.len();
    QualityReport {
        object_points: object_ids.len(),
        reconstructed_object_points,
        completeness: if object_ids.is_empty() {
            0.0
        } else {
            reconstructed_object_points as f64 / object_ids.len() as f64
        },
        object_accuracy: ErrorSummary::of(object_errors),
        overall_accuracy: ErrorSummary::of(all_errors),
        reconstructed_points: cloud.points.len(),
        skipped_single_view: cloud.stats.single_view,
        degenerate: cloud.stats.degenerate + cloud.stats.undistort_failures,
    }
}

/// Writes the cloud as ASCII PLY, points in ascending id order.
pub fn export_ply(cloud: &DenseCloud, destination: &Path) -> Result<(), ReconstructError> {
    let file = BufWriter::new(File::create(destination)?);
    ply::write_ply(file, &cloud.positions())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::CaptureFrame;
    use crate::planner::yaw_facing;
    use crate::simworld::{Observation, WorldPoint};

    fn frame(index: usize, pose: Pose, ids: &[u32]) -> CaptureFrame {
        CaptureFrame {
            waypoint_index: index,
            pose_estimate: pose,
            pose_truth: Some(pose),
            duplicate_of_latest: false,
            observations: ids
                .iter()
                .map(|&id| Observation {
                    point_id: id,
                    pixel: Vec2::new(100.0, 100.0),
                })
                .collect(),
        }
    }

    #[test]
    fn overlap_edges() {
        let p = Pose::new(Vec3::zeros(), 0.0);
        let set = CaptureSet {
            frames: vec![
                frame(0, p, &[1, 2, 3]),
                frame(1, p, &[3, 4, 5]),
                frame(2, p, &[2, 3, 4]),
            ],
        };
        let g = find_overlaps(&set, 2);
        assert_eq!(
            g.edges,
            vec![
                OverlapEdge {
                    a: 0,
                    b: 2,
                    shared: 2
                },
                OverlapEdge {
                    a: 1,
                    b: 2,
                    shared: 2
                }
            ]
        );
        let disjoint = CaptureSet {
            frames: vec![frame(0, p, &[1, 2]), frame(1, p, &[3, 4])],
        };
        assert!(find_overlaps(&disjoint, 1).edges.is_empty());
        let g = find_overlaps(&set, 1);
        assert_eq!(g.edges.len(), 3);
        assert!(g.edges.iter().all(|e| e.a != e.b));
        assert!(g.connected(2, 0) && g.connected(0, 2));
        let g = find_overlaps(&set, 3);
        assert!(g.edges.is_empty());
    }

    /// Small exact scene seen from three posed cameras.
    fn exact_set(cam: &CameraIntrinsics) -> (Scene, CaptureSet) {
        let center = Vec3::new(0.0, 3.0, 1.0);
        let points: Vec<WorldPoint> = (0..30)
            .map(|i| {
                let a = i as f64 * 0.7;
                WorldPoint {
                    id: i,
                    position: center
                        + Vec3::new(0.4 * a.cos(), 0.4 * a.sin(), 0.1 * (i % 5) as f64 - 0.2),
                    object_id: Some(0),
                }
            })
            .collect();
        let scene = Scene {
            points,
            objects: vec![],
            background_count: 0,
            seed: 0,
        };
        let frames = [-0.6f64, 0.0, 0.6]
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let pos = center
                    + Vec3::new(
                        3.0 * (a - std::f64::consts::FRAC_PI_2).cos(),
                        3.0 * (a - std::f64::consts::FRAC_PI_2).sin(),
                        0.0,
                    );
                let pose = Pose::new(pos, yaw_facing(&pos, &center));
                let observations = scene
                    .points
                    .iter()
                    .map(|p| Observation {
                        point_id: p.id,
                        pixel: distort_pixel(pose.project_normalized(&p.position).unwrap(), cam),
                    })
                    .collect();
                CaptureFrame {
                    waypoint_index: k,
                    pose_estimate: pose,
                    pose_truth: Some(pose),
                    duplicate_of_latest: false,
                    observations,
                }
            })
            .collect();
        (scene, CaptureSet { frames })
    }

    #[test]
    fn exact_reconstruction() {
        let cam = CameraIntrinsics::default();
        let (scene, set) = exact_set(&cam);
        let cloud = reconstruct(
            &set,
            &cam,
            &ReconstructionMode::Dense,
            &ReconstructParams::default(),
        )
        .unwrap();
        assert_eq!(cloud.points.len(), 30);
        for p in &cloud.points {
            assert!((p.position - scene.points[p.point_id as usize].position).norm() < 1e-6);
            assert!(p.residual_px < 1e-6);
            assert_eq!(p.view_count, 3);
        }
        let q = score(&cloud, &scene);
        assert_eq!(q.completeness, 1.0);
        assert!(q.object_accuracy.unwrap().rms < 1e-6);
    }

    #[test]
    fn sparse_mode_restricts_ids() {
        let cam = CameraIntrinsics::default();
        let (_, set) = exact_set(&cam);
        let keep: BTreeSet<u32> = (0..10).collect();
        let cloud = reconstruct(
            &set,
            &cam,
            &ReconstructionMode::Sparse(keep),
            &ReconstructParams::default(),
        )
        .unwrap();
        assert_eq!(cloud.points.len(), 10);
        assert_eq!(cloud.stats.excluded_by_mode, 20);
    }

    #[test]
    fn gating_and_single_view() {
        let cam = CameraIntrinsics::default();
        let (_, mut set) = exact_set(&cam);
        let one = CaptureSet {
            frames: vec![set.frames[0].clone()],
        };
        let empty = CaptureSet::default();
        for s in [&empty, &one] {
            assert!(matches!(
                reconstruct(
                    s,
                    &cam,
                    &ReconstructionMode::Dense,
                    &ReconstructParams::default()
                ),
                Err(ReconstructError::InsufficientViews(_))
            ));
        }
        // id 0 only in the first frame
        for f in &mut set.frames[1..] {
            f.observations.retain(|o| o.point_id != 0);
        }
        let cloud = reconstruct(
            &set,
            &cam,
            &ReconstructionMode::Dense,
            &ReconstructParams::default(),
        )
        .unwrap();
        assert_eq!(cloud.stats.single_view, 1);
        assert!(cloud.points.iter().all(|p| p.point_id != 0));
    }

    #[test]
    fn unrelated_frames_are_empty() {
        let cam = CameraIntrinsics::default();
        let (_, mut set) = exact_set(&cam);
        set.frames.truncate(2);
        set.frames[1]
            .observations
            .iter_mut()
            .for_each(|o| o.point_id += 1000);
        assert!(matches!(
            reconstruct(
                &set,
                &cam,
                &ReconstructionMode::Dense,
                &ReconstructParams::default()
            ),
            Err(ReconstructError::EmptyReconstruction)
        ));
    }

    #[test]
    fn oracle_mode_requires_truth() {
        let cam = CameraIntrinsics::default();
        let (_, mut set) = exact_set(&cam);
        set.frames[1].pose_truth = None;
        let params = ReconstructParams {
            oracle_poses: true,
            ..Default::default()
        };
        assert!(matches!(
            reconstruct(&set, &cam, &ReconstructionMode::Dense, &params),
            Err(ReconstructError::MissingTruthPose(1))
        ));
    }

    #[test]
    fn score_examples() {
        let cam = CameraIntrinsics::default();
        let (scene, set) = exact_set(&cam);
        let cloud = reconstruct(
            &set,
            &cam,
            &ReconstructionMode::Dense,
            &ReconstructParams::default(),
        )
        .unwrap();

        let empty = DenseCloud {
            points: vec![],
            stats: ReconstructionStats::default(),
        };
        let q = score(&empty, &scene);
        assert_eq!(q.completeness, 0.0);
        assert!(q.object_accuracy.is_none() && q.overall_accuracy.is_none());

        let mut half = empty.clone();
        half.points = scene
            .points
            .iter()
            .take(15)
            .map(|p| CloudPoint {
                position: p.position,
                point_id: p.id,
                view_count: 2,
                residual_px: 0.0,
            })
            .collect();
        let q = score(&half, &scene);
        assert_eq!(q.completeness, 0.5);
        assert_eq!(q.object_accuracy.unwrap().rms, 0.0);
        assert!(score(&cloud, &scene).object_accuracy.unwrap().median < 1e-6);
    }

    #[test]
    fn ply_export_is_byte_stable() {
        let cam = CameraIntrinsics::default();
        let (_, set) = exact_set(&cam);
        let cloud = reconstruct(
            &set,
            &cam,
            &ReconstructionMode::Dense,
            &ReconstructParams::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ply");
        let b = dir.path().join("b.ply");
        export_ply(&cloud, &a).unwrap();
        export_ply(&cloud, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let text = std::fs::read_to_string(&a).unwrap();
        assert!(text.contains("element vertex 30\n"));
        let back = ply::read_ply(text.as_bytes()).unwrap();
        for (p, q) in cloud.points.iter().zip(&back) {
            assert!((p.position - q).norm() < 1e-5);
        }
        assert!(matches!(
            export_ply(&cloud, &dir.path().join("missing/dir/c.ply")),
            Err(ReconstructError::IoFailure(_))
        ));
    }
}
