//! Target detection on a sparse map: nearest-fraction depth filter, DBSCAN,
//! and closest-cluster selection.

use crate::geometry::{Pose, Vec3};
use crate::simworld::SparseMapFrame;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectError {
    #[error("no map points in front of the camera survive the depth filter")]
    EmptyFrame,
    #[error("no cluster found in the map")]
    NoTarget,
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}

/// Which quantity the depth filter ranks points by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepthAxis {
    /// Distance along the drone's viewing direction.
    #[default]
    ViewAxis,
    /// World `y` offset from the drone, independent of heading.
    WorldY,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub keep_fraction: f64,
    pub depth_axis: DepthAxis,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            keep_fraction: 0.10,
            depth_axis: DepthAxis::ViewAxis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanParams {
    /// Neighborhood radius, inclusive.
    pub eps: f64,
    /// A point is core when its neighborhood (itself included) holds
    /// strictly more than this many points.
    pub min_points: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 0.99,
            min_points: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Noise,
    Cluster(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub centroid: Vec3,
    /// Member ids, ascending.
    pub members: Vec<u32>,
    /// Ids of the core members, ascending.
    pub core: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// One label per input point, in input order.
    pub labels: Vec<Label>,
    pub clusters: Vec<Cluster>,
}

fn depth_of(point: &Vec3, pose: &Pose, axis: DepthAxis) -> f64 {
    let d = point - pose.position;
    match axis {
        DepthAxis::ViewAxis => d.dot(&pose.forward()),
        DepthAxis::WorldY => d.y,
    }
}

/// Keeps the `ceil(keep_fraction * n)` points with the smallest positive
/// depth, where `n` counts the points in front of the drone. Ties on depth
/// go to the lower id. The result is sorted by id.
pub fn depth_filter(
    frame: &SparseMapFrame,
    params: &FilterParams,
) -> Result<Vec<(u32, Vec3)>, DetectError> {
    if !(params.keep_fraction > 0.0 && params.keep_fraction <= 1.0) {
        return Err(DetectError::InvalidParams(format!(
            "keep_fraction {} outside (0, 1]",
            params.keep_fraction
        )));
    }
    let mut front: Vec<(f64, u32, Vec3)> = frame
        .points
        .iter()
        .map(|(id, p)| (depth_of(p, &frame.drone_pose, params.depth_axis), *id, *p))
        .filter(|(d, _, _)| *d > 0.0)
        .collect();
    if front.is_empty() {
        return Err(DetectError::EmptyFrame);
    }
    front.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // guard against 0.1 * 30 = 3.0000000000000004 style rounding
    let keep = ((params.keep_fraction * front.len() as f64) - 1e-9)
        .ceil()
        .max(1.0) as usize;
    front.truncate(keep);
    let mut kept: Vec<(u32, Vec3)> = front.into_iter().map(|(_, id, p)| (id, p)).collect();
    kept.sort_by_key(|(id, _)| *id);
    Ok(kept)
}

/// Uniform grid over cells of side `eps` for radius queries.
struct GridIndex {
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl GridIndex {
    fn new(points: &[(u32, Vec3)], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, (_, p)) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, buckets }
    }

    fn key(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Indices within `eps` of `points[i]` (inclusive, self included), ascending.
    fn neighbors(&self, points: &[(u32, Vec3)], i: usize, eps: f64) -> Vec<usize> {
        let p = &points[i].1;
        let (cx, cy, cz) = Self::key(p, self.cell);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(
                            bucket
                                .iter()
                                .copied()
                                .filter(|&j| (points[j].1 - p).norm() <= eps),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// DBSCAN over bare points; the input index serves as the point id.
pub fn dbscan(points: &[Vec3], params: &DbscanParams) -> ClusterResult {
    let labeled: Vec<(u32, Vec3)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i as u32, *p))
        .collect();
    dbscan_with_ids(&labeled, params)
}

/// DBSCAN over identified points.
///
/// Core points are connected into clusters by breadth-first search, seeded
/// in ascending id order, so cluster `k` is the one whose smallest core id
/// is the `k`-th smallest. A non-core point within `eps` of some core point
/// joins the cluster of its lowest-id core neighbor; anything else is noise.
/// Results do not depend on input order beyond this id-based tie-break.
pub fn dbscan_with_ids(points: &[(u32, Vec3)], params: &DbscanParams) -> ClusterResult {
    let n = points.len();
    if n == 0 {
        return ClusterResult {
            labels: vec![],
            clusters: vec![],
        };
    }
    let grid = GridIndex::new(points, params.eps.max(f64::MIN_POSITIVE));
    let neighborhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| grid.neighbors(points, i, params.eps))
        .collect();
    let is_core: Vec<bool> = neighborhoods
        .iter()
        .map(|nb| nb.len() > params.min_points)
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| points[i].0);

    let mut labels = vec![Label::Noise; n];
    let mut cluster_count = 0;
    for &seed in &order {
        if !is_core[seed] || labels[seed] != Label::Noise {
            continue;
        }
        let c = cluster_count;
        cluster_count += 1;
        labels[seed] = Label::Cluster(c);
        let mut queue = VecDeque::from([seed]);
        while let Some(i) = queue.pop_front() {
            for &j in &neighborhoods[i] {
                if is_core[j] && labels[j] == Label::Noise {
                    labels[j] = Label::Cluster(c);
                    queue.push_back(j);
                }
            }
        }
    }

    for i in 0..n {
        if is_core[i] {
            continue;
        }
        labels[i] = neighborhoods[i]
            .iter()
            .filter(|&&j| is_core[j])
            .min_by_key(|&&j| points[j].0)
            .map(|&j| labels[j])
            .unwrap_or(Label::Noise);
    }

    let mut clusters: Vec<Cluster> = (0..cluster_count)
        .map(|_| Cluster {
            centroid: Vec3::zeros(),
            members: vec![],
            core: vec![],
        })
        .collect();
    for (i, label) in labels.iter().enumerate() {
        if let Label::Cluster(c) = label {
            clusters[*c].centroid += points[i].1;
            clusters[*c].members.push(points[i].0);
            if is_core[i] {
                clusters[*c].core.push(points[i].0);
            }
        }
    }
    for c in &mut clusters {
        c.centroid /= c.members.len() as f64;
        c.members.sort_unstable();
        c.core.sort_unstable();
    }
    ClusterResult { labels, clusters }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub cluster: usize,
    pub centroid: Vec3,
}

/// Picks the cluster whose centroid is nearest the drone; ties go to the
/// lower cluster index.
pub fn select_target(result: &ClusterResult, drone_pose: &Pose) -> Result<Target, DetectError> {
    result
        .clusters
        .iter()
        .enumerate()
        .map(|(i, c)| (i, c, (c.centroid - drone_pose.position).norm()))
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .map(|(i, c, _)| Target {
            cluster: i,
            centroid: c.centroid,
        })
        .ok_or(DetectError::NoTarget)
}

/// How the published target position is computed from the selected cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetExtent {
    /// Mean of the cluster found in the depth-filtered points.
    Filtered,
    /// The cluster's core points (which all lie in the near fraction) plus
    /// every in-front map point within `eps` of one of them. The near
    /// fraction only sees the front face of an object, so its mean sits
    /// toward the camera; attaching border points from the whole map
    /// recovers the object's far side.
    #[default]
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DetectorParams {
    pub filter: FilterParams,
    pub dbscan: DbscanParams,
    pub extent: TargetExtent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub target: Vec3,
    pub cluster: usize,
    /// Ids of the points whose mean is `target`, ascending.
    pub members: Vec<u32>,
    pub filtered: Vec<(u32, Vec3)>,
    pub clusters: ClusterResult,
}

/// Full detection pass over one map frame.
pub fn detect(frame: &SparseMapFrame, params: &DetectorParams) -> Result<Detection, DetectError> {
    if !(params.dbscan.eps > 0.0) || params.dbscan.min_points < 1 {
        return Err(DetectError::InvalidParams(
            "eps must be > 0 and min_points >= 1".into(),
        ));
    }
    let filtered = depth_filter(frame, &params.filter)?;
    let clusters = dbscan_with_ids(&filtered, &params.dbscan);
    let selected = select_target(&clusters, &frame.drone_pose)?;
    let cluster = &clusters.clusters[selected.cluster];

    let (target, members) = match params.extent {
        TargetExtent::Filtered => (selected.centroid, cluster.members.clone()),
        TargetExtent::Expanded => {
            let core: Vec<Vec3> = filtered
                .iter()
                .filter(|(id, _)| cluster.core.binary_search(id).is_ok())
                .map(|(_, p)| *p)
                .collect();
            let mut members: Vec<(u32, Vec3)> = frame
                .points
                .iter()
                .filter(|(_, p)| depth_of(p, &frame.drone_pose, params.filter.depth_axis) > 0.0)
                .filter(|(_, p)| core.iter().any(|c| (c - p).norm() <= params.dbscan.eps))
                .copied()
                .collect();
            members.sort_by_key(|(id, _)| *id);
            let sum = members.iter().fold(Vec3::zeros(), |acc, (_, p)| acc + p);
            (
                sum / members.len() as f64,
                members.into_iter().map(|(id, _)| id).collect(),
            )
        }
    };
    Ok(Detection {
        target,
        cluster: selected.cluster,
        members,
        filtered,
        clusters,
    })
}
