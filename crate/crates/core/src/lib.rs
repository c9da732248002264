//! Deterministic simulator of an autonomous object-scanning quadrotor.
//!
//! A monocular drone builds a sparse map, finds the nearest dense cluster in
//! it, flies a circular orbit around that target under proportional control,
//! captures an image at each waypoint and triangulates a dense point cloud
//! from the captures.
//!
//! * [`geometry`]: frames, angles, radial distortion, triangulation
//! * [`simworld`]: synthetic scene and sparse-map feed
//! * [`vehicle`]: plant dynamics and the pose estimator
//! * [`detector`]: depth filter, DBSCAN, target selection
//! * [`planner`]: orbit waypoints
//! * [`controller`]: waypoint controller
//! * [`capture`]: frame buffering and waypoint captures
//! * [`reconstructor`]: overlap graph, triangulation, scoring, PLY
//! * [`mission`]: the state machine tying it together

// `!(x > 0.0)` style checks reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capture;
pub mod controller;
pub mod detector;
pub mod geometry;
pub mod mission;
pub mod planner;
pub mod reconstructor;
pub mod simworld;
pub mod vehicle;

pub use geometry::{Pose, Vec2, Vec3};
