//! Camera-space 3D hand pose estimation from a single depth-style image via
//! dense voting over a pixel-aligned implicit field.
//!
//! The crate covers the full pipeline: synthetic articulated-hand scene
//! generation, signed-distance geometry, the offset-field re-parameterization
//! of joint positions, point sampling, the neural field and its baselines,
//! training, vote-based inference, surface extraction, and evaluation
//! metrics.
//!
//! All geometry is generic over the scalar type through [`scalar::Real`];
//! `f64` aliases are exported for the geometry path and `f32` is used by the
//! neural stack. Units are millimetres in camera space unless noted.

pub mod ablation;
pub mod bvh;
pub mod camera;
pub mod error;
pub mod hand;
pub mod knn;
pub mod marching_cubes;
pub mod math;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod pose_field;
pub mod render;
pub mod sampling;
pub mod scalar;
pub mod scene;
pub mod sdf;

pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete f64 geometry aliases.
pub type Point3d = math::Point3<f64>;
pub type Vec3d = math::Vec3<f64>;
pub type TriMeshD = mesh::TriMesh<f64>;
pub type CameraD = camera::CameraIntrinsics<f64>;

/// Concrete f32 aliases for the neural stack.
pub type Point3f = math::Point3<f32>;
pub type Vec3f = math::Vec3<f32>;
