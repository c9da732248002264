//! Frame transforms, angle arithmetic, the radial lens model and multi-view
//! triangulation.
//!
//! Conventions used throughout the crate:
//!
//! * World frame is right-handed with `z` up. Yaw is measured
//!   counterclockwise about `+z` and kept in `(-π, π]`.
//! * The body frame of a vehicle yawed by `θ` is obtained from the world
//!   frame with `R_z(θ) = [[cos θ, sin θ], [-sin θ, cos θ]]`. The body `+y`
//!   axis is the viewing direction, so at zero yaw the camera looks along
//!   world `+y`.
//! * The camera frame is `x` right, `y` down, `z` forward (depth). Normalized
//!   image coordinates are `(x/z, y/z)`.

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Fixed-point iterations attempted before falling back to the radial
/// Newton solve.
pub const UNDISTORT_MAX_ITERATIONS: usize = 20;
/// Convergence tolerance of the undistortion, normalized image units.
pub const UNDISTORT_TOLERANCE: f64 = 1e-9;
/// Minimum ratio between the smallest and largest singular value of the
/// ray normal matrix before a triangulation is declared degenerate.
pub const TRIANGULATION_MIN_CONDITION: f64 = 1e-8;
/// Minimum spread of camera centers, meters.
pub const TRIANGULATION_MIN_BASELINE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("undistortion did not converge for pixel ({u}, {v})")]
    NonConvergent { u: f64, v: f64 },
    #[error("degenerate triangulation geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("triangulation needs at least 2 views, got {0}")]
    InsufficientViews(usize),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
}

/// Vehicle or camera pose: position plus heading about `+z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    /// Builds a pose, wrapping `yaw` into `(-π, π]`.
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Self {
            position,
            yaw: wrap_angle(yaw),
        }
    }

    /// Viewing direction (body `+y`) expressed in the world frame.
    pub fn forward(&self) -> Vec3 {
        Vec3::new(-self.yaw.sin(), self.yaw.cos(), 0.0)
    }

    /// Body `+x` expressed in the world frame.
    pub fn right(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    /// World point expressed in the camera frame (x right, y down, z forward).
    pub fn world_to_camera(&self, point: &Vec3) -> Vec3 {
        let d = point - self.position;
        Vec3::new(d.dot(&self.right()), -d.z, d.dot(&self.forward()))
    }

    /// Normalized image coordinates of a world point, `None` when the point
    /// is not strictly in front of the camera.
    pub fn project_normalized(&self, point: &Vec3) -> Option<Vec2> {
        let c = self.world_to_camera(point);
        (c.z > 0.0).then(|| Vec2::new(c.x / c.z, c.y / c.z))
    }

    /// Unit world-frame direction of the ray through normalized coordinates.
    pub fn ray_direction(&self, normalized: &Vec2) -> Vec3 {
        let down = Vec3::new(0.0, 0.0, -1.0);
        (self.right() * normalized.x + down * normalized.y + self.forward()).normalize()
    }
}

/// Applies `R_z(θ)` to the column vector `v`, mapping a world displacement
/// into the body frame of a vehicle yawed by `θ`.
pub fn rotate_world_to_body(v: Vec2, theta: f64) -> Vec2 {
    let (s, c) = theta.sin_cos();
    Vec2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
}

/// Inverse of [`rotate_world_to_body`].
pub fn rotate_body_to_world(v: Vec2, theta: f64) -> Vec2 {
    rotate_world_to_body(v, -theta)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Pinhole intrinsics with two-coefficient radial distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// Roughly the front camera of a small consumer quadrotor: 640x360 with a
    /// 93 degree horizontal field of view and noticeable barrel distortion.
    fn default() -> Self {
        let width = 640;
        let height = 360;
        let f = (width as f64 / 2.0) / (93.0_f64.to_radians() / 2.0).tan();
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            k1: -0.2,
            k2: 0.05,
            width,
            height,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::InvalidIntrinsics("non-finite value".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics(
                "focal lengths must be positive".into(),
            ));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    /// Horizontal field of view in radians, symmetric about the optical axis.
    pub fn horizontal_fov(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.fx)).atan()
    }

    /// Vertical field of view in radians.
    pub fn vertical_fov(&self) -> f64 {
        2.0 * (self.height as f64 / (2.0 * self.fy)).atan()
    }

    pub fn contains_pixel(&self, pixel: &Vec2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }

    fn radial_scale(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }
}

/// Forward lens model: normalized coordinates to distorted pixels.
pub fn distort_pixel(normalized: Vec2, cam: &CameraIntrinsics) -> Vec2 {
    let s = cam.radial_scale(normalized.norm_squared());
    Vec2::new(
        cam.fx * s * normalized.x + cam.cx,
        cam.fy * s * normalized.y + cam.cy,
    )
}

/// Inverts [`distort_pixel`].
///
/// Runs the fixed-point iteration `x <- p / s(|x|)` first. Strong barrel
/// distortion makes that map expansive near the edge of the supported
/// range, so an unconverged result is finished with a bracketed Newton solve
/// of the scalar radial equation `r * s(r) = r_d`.
pub fn undistort_pixel(pixel: Vec2, cam: &CameraIntrinsics) -> Result<Vec2, GeometryError> {
    let distorted = Vec2::new((pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy);
    let fail = || GeometryError::NonConvergent {
        u: pixel.x,
        v: pixel.y,
    };
    if !distorted.x.is_finite() || !distorted.y.is_finite() {
        return Err(fail());
    }
    let rd = distorted.norm();
    if rd == 0.0 {
        return Ok(distorted);
    }

    let mut x = distorted;
    for _ in 0..UNDISTORT_MAX_ITERATIONS {
        let next = distorted / cam.radial_scale(x.norm_squared());
        let step = (next - x).norm();
        x = next;
        if !x.x.is_finite() || !x.y.is_finite() {
            break;
        }
        if step < UNDISTORT_TOLERANCE {
            let r = x.norm();
            if (r * cam.radial_scale(r * r) - rd).abs() < UNDISTORT_TOLERANCE {
                return Ok(x);
            }
        }
    }

    let r = solve_radius(rd, cam).ok_or_else(fail)?;
    Ok(distorted * (r / rd))
}

/// Smallest positive root of `r * s(r) = rd` on the monotone branch.
fn solve_radius(rd: f64, cam: &CameraIntrinsics) -> Option<f64> {
    let f = |r: f64| r * cam.radial_scale(r * r) - rd;
    let df = |r: f64| 1.0 + 3.0 * cam.k1 * r * r + 5.0 * cam.k2 * r.powi(4);

    // Walk outwards until the residual changes sign or the function stops
    // increasing (no preimage on this branch).
    let step = rd.max(1e-3) / 16.0;
    let mut lo = 0.0;
    let mut hi = step;
    let mut bracketed = false;
    for _ in 0..4096 {
        if f(hi) >= 0.0 {
            bracketed = true;
            break;
        }
        if df(hi) <= 0.0 {
            return None;
        }
        lo = hi;
        hi += step;
    }
    if !bracketed {
        return None;
    }

    let mut r = 0.5 * (lo + hi);
    for _ in 0..100 {
        let fr = f(r);
        if fr.abs() < 1e-15 {
            return Some(r);
        }
        if fr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let d = df(r);
        let newton = r - fr / d;
        r = if d > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 {
            break;
        }
    }
    (f(r).abs() < UNDISTORT_TOLERANCE).then_some(r)
}

/// Least-squares intersection of rays cast from posed cameras through
/// undistorted normalized image coordinates.
///
/// Two views use the closed-form midpoint of the common perpendicular; more
/// views solve the homogeneous system `[d]x (X - C) = 0` by SVD.
pub fn triangulate_point(views: &[(Pose, Vec2)]) -> Result<Vec3, GeometryError> {
    if views.len() < 2 {
        return Err(GeometryError::InsufficientViews(views.len()));
    }
    let centers: Vec<Vec3> = views.iter().map(|(p, _)| p.position).collect();
    let dirs: Vec<Vec3> = views.iter().map(|(p, n)| p.ray_direction(n)).collect();

    let mean = centers.iter().fold(Vec3::zeros(), |acc, c| acc + c) / centers.len() as f64;
    let spread = centers
        .iter()
        .map(|c| (c - mean).norm())
        .fold(0.0, f64::max);
    if spread < TRIANGULATION_MIN_BASELINE {
        return Err(GeometryError::DegenerateGeometry(
            "coincident camera centers",
        ));
    }

    let normal = dirs.iter().fold(Matrix3::zeros(), |acc, d| {
        acc + Matrix3::identity() - d * d.transpose()
    });
    let sv = normal.singular_values();
    if sv.min() < TRIANGULATION_MIN_CONDITION * sv.max() {
        return Err(GeometryError::DegenerateGeometry("near-parallel rays"));
    }

    if views.len() == 2 {
        return Ok(midpoint(centers[0], dirs[0], centers[1], dirs[1]));
    }

    let mut design = DMatrix::<f64>::zeros(3 * views.len(), 4);
    for (i, (c, d)) in centers.iter().zip(&dirs).enumerate() {
        let skew = d.cross_matrix();
        let offset = -(skew * (c - mean));
        design.view_mut((3 * i, 0), (3, 3)).copy_from(&skew);
        design.view_mut((3 * i, 3), (3, 1)).copy_from(&offset);
    }
    let svd = design.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(GeometryError::DegenerateGeometry("svd failed"))?;
    let smallest = svd.singular_values.imin();
    let h = v_t.row(smallest);
    if h[3].abs() <= f64::EPSILON {
        return Err(GeometryError::DegenerateGeometry("point at infinity"));
    }
    Ok(Vec3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]) + mean)
}

fn midpoint(c1: Vec3, d1: Vec3, c2: Vec3, d2: Vec3) -> Vec3 {
    let w0 = c1 - c2;
    let b = d1.dot(&d2);
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    0.5 * ((c1 + d1 * s) + (c2 + d2 * t))
}
