//! LiDAR pseudo-labeling from a frozen 2D image teacher.
//!
//! Per-pixel class probabilities are lifted onto the points a camera sees,
//! repaired with K-nearest-neighbor refinement in 3D, and filtered with
//! class-balanced confidence thresholds. Around that core sit the dataset
//! readers and writers, augmentation, test-time augmentation and weight
//! soups, evaluation, and a synthetic scene generator for end-to-end checks.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases. On-disk data is always `f32`.

// `!(a >= b)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod pipeline;
pub mod projection;
pub mod refine;
pub mod scalar;
pub mod synth;
pub mod threshold;
pub mod tta;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type PointCloud = geometry::PointCloud<f32>;
pub type PointCloud64 = geometry::PointCloud<f64>;
pub type Point = geometry::Point<f32>;
pub type PerPointProbs = geometry::PerPointProbs<f32>;
pub type PerPointProbs64 = geometry::PerPointProbs<f64>;
pub type RigidTransform = geometry::RigidTransform<f32>;
pub type RigidTransform64 = geometry::RigidTransform<f64>;
pub type CalibrationRig = projection::CalibrationRig<f32>;
pub type CalibrationRig64 = projection::CalibrationRig<f64>;
pub type ProbMap = projection::ProbMap<f32>;
pub type KdTree = refine::KdTree<f32>;
pub type KdTree64 = refine::KdTree<f64>;

pub use geometry::{ClassId, LabelArray, IGNORE_ID};
