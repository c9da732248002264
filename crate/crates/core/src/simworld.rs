//! Synthetic scene and camera standing in for a live monocular SLAM map feed.

use crate::geometry::{distort_pixel, CameraIntrinsics, Pose, Vec2, Vec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rejection-sampling attempts allowed per requested background point.
const BACKGROUND_ATTEMPTS_PER_POINT: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub centroid: Vec3,
    pub radius: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundSpec {
    pub count: usize,
    pub min: Vec3,
    pub max: Vec3,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self {
            count: 300,
            min: Vec3::new(-8.0, 6.0, 0.0),
            max: Vec3::new(8.0, 12.0, 3.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    pub background: BackgroundSpec,
}

impl Default for SceneSpec {
    /// One 200-point object in a 0.5 m ball three meters in front of a drone
    /// hovering at the origin, and 300 clutter points at least 6 m down range.
    fn default() -> Self {
        Self {
            objects: vec![ObjectSpec {
                centroid: Vec3::new(0.0, 3.0, 1.0),
                radius: 0.5,
                count: 200,
            }],
            background: BackgroundSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub id: u32,
    pub position: Vec3,
    /// `None` for background clutter.
    pub object_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub points: Vec<WorldPoint>,
    pub objects: Vec<ObjectSpec>,
    pub background_count: usize,
    pub seed: u64,
}

impl Scene {
    pub fn point(&self, id: u32) -> Option<&WorldPoint> {
        // ids are assigned densely in generation order
        self.points
            .get(id as usize)
            .filter(|p| p.id == id)
            .or_else(|| self.points.iter().find(|p| p.id == id))
    }

    pub fn object_points(&self) -> impl Iterator<Item = &WorldPoint> {
        self.points.iter().filter(|p| p.object_id.is_some())
    }
}

/// One published sparse map: noisy estimates of the points currently in view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMapFrame {
    pub points: Vec<(u32, Vec3)>,
    pub drone_pose: Pose,
    pub frame_index: u64,
}

/// Distorted pixel measurement of a world point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point_id: u32,
    pub pixel: Vec2,
}

/// Samples a scene. Object ids follow the order of `spec.objects`; point ids
/// are dense, objects first and background last.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SceneError> {
    for (i, o) in spec.objects.iter().enumerate() {
        if !(o.radius > 0.0) || !o.radius.is_finite() {
            return Err(SceneError::InvalidSpec(format!(
                "object {i} radius must be > 0"
            )));
        }
        if !finite(&o.centroid) {
            return Err(SceneError::InvalidSpec(format!(
                "object {i} centroid not finite"
            )));
        }
    }
    let bg = &spec.background;
    if bg.count > 0
        && (!finite(&bg.min) || !finite(&bg.max) || (0..3).any(|k| bg.min[k] > bg.max[k]))
    {
        return Err(SceneError::InvalidSpec("background box is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    for (oid, o) in spec.objects.iter().enumerate() {
        for _ in 0..o.count {
            let position = o.centroid + sample_unit_ball(&mut rng) * o.radius;
            points.push(WorldPoint {
                id: points.len() as u32,
                position,
                object_id: Some(oid as u32),
            });
        }
    }

    let mut attempts = 0usize;
    let budget = bg.count.saturating_mul(BACKGROUND_ATTEMPTS_PER_POINT);
    let mut placed = 0;
    while placed < bg.count {
        if attempts >= budget {
            return Err(SceneError::InvalidSpec(format!(
                "background box cannot hold {} points outside the object balls",
                bg.count
            )));
        }
        attempts += 1;
        let position = Vec3::from_fn(|k, _| {
            if bg.max[k] > bg.min[k] {
                rng.random_range(bg.min[k]..bg.max[k])
            } else {
                bg.min[k]
            }
        });
        let inside_object = spec
            .objects
            .iter()
            .any(|o| (position - o.centroid).norm() <= o.radius);
        if inside_object {
            continue;
        }
        points.push(WorldPoint {
            id: points.len() as u32,
            position,
            object_id: None,
        });
        placed += 1;
    }

    Ok(Scene {
        points,
        objects: spec.objects.clone(),
        background_count: bg.count,
        seed,
    })
}

fn finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

fn sample_unit_ball<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

/// True when `point` lies in front of the camera and inside both angular
/// half-widths of the field of view.
pub fn in_frustum(pose: &Pose, cam: &CameraIntrinsics, point: &Vec3) -> bool {
    let c = pose.world_to_camera(point);
    if c.z <= 0.0 {
        return false;
    }
    c.x.abs().atan2(c.z) <= cam.horizontal_fov() / 2.0
        && c.y.abs().atan2(c.z) <= cam.vertical_fov() / 2.0
}

/// Ids of scene points inside the camera frustum at `pose`, ascending.
pub fn visible_ids(scene: &Scene, pose: &Pose, cam: &CameraIntrinsics) -> Vec<u32> {
    scene
        .points
        .iter()
        .filter(|p| in_frustum(pose, cam, &p.position))
        .map(|p| p.id)
        .collect()
}

/// Publishes a sparse map frame: every point in the frustum with its position
/// perturbed by isotropic Gaussian noise of standard deviation `noise_sigma`.
///
/// `drone_pose` is both the camera pose used for visibility and the pose
/// stamped on the frame.
pub fn observe<R: Rng>(
    scene: &Scene,
    pose: &Pose,
    cam: &CameraIntrinsics,
    noise_sigma: f64,
    frame_index: u64,
    rng: &mut R,
) -> SparseMapFrame {
    let noise = gaussian(noise_sigma);
    let points = scene
        .points
        .iter()
        .filter(|p| in_frustum(pose, cam, &p.position))
        .map(|p| {
            let mut est = p.position;
            if let Some(n) = &noise {
                for k in 0..3 {
                    est[k] += n.sample(rng);
                }
            }
            (p.id, est)
        })
        .collect();
    SparseMapFrame {
        points,
        drone_pose: *pose,
        frame_index,
    }
}

/// Renders the pixel observations a camera at `pose` would record.
/// Points leaving the image after distortion and pixel noise are dropped.
pub fn render_observations<R: Rng>(
    scene: &Scene,
    pose: &Pose,
    cam: &CameraIntrinsics,
    pixel_sigma: f64,
    rng: &mut R,
) -> Vec<Observation> {
    let noise = gaussian(pixel_sigma);
    let mut out = Vec::new();
    for p in &scene.points {
        if !in_frustum(pose, cam, &p.position) {
            continue;
        }
        let Some(n) = pose.project_normalized(&p.position) else {
            continue;
        };
        let mut pixel = distort_pixel(n, cam);
        if let Some(d) = &noise {
            pixel.x += d.sample(rng);
            pixel.y += d.sample(rng);
        }
        if cam.contains_pixel(&pixel) {
            out.push(Observation {
                point_id: p.id,
                pixel,
            });
        }
    }
    out
}

pub(crate) fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
}
