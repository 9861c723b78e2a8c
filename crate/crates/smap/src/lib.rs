//! Segment-based 3D point-cloud mapping.
//!
//! The library turns streamed point clouds into a compact map of segments:
//! points are accumulated into a dynamic voxel grid, grown into segments by
//! incremental Euclidean clustering, described by a small learned descriptor
//! trained jointly for retrieval and reconstruction, and localized against a
//! global segment map by nearest-neighbour retrieval with geometric
//! consistency verification. The same descriptors reconstruct the map and
//! carry semantic labels, which is what makes the representation cheap to
//! store and transmit.
//!
//! Core math is generic over the scalar type (`f32`/`f64`) via
//! [`scalar::Scalar`]; the concrete aliases below fix the precision used by
//! the pipeline (geometry in `f64`, network weights in `f32`).

pub mod descriptors;
pub mod eval;
pub mod geom;
pub mod localization;
pub mod nn;
pub mod pipeline;
pub mod prep;
pub mod scalar;
pub mod segmentation;

pub use scalar::Scalar;

/// Scalar type used for all geometry in the pipeline.
pub type Real = f64;

/// 3D point in meters.
pub type Point3 = geom::Point3<Real>;
/// Rigid-body transform (rotation + translation).
pub type RigidTransform = geom::RigidTransform<Real>;
/// Convex hull of a point set.
pub type ConvexHull = geom::ConvexHull<Real>;
/// Sparse accumulation grid with activation thresholds.
pub type DynamicVoxelGrid = geom::DynamicVoxelGrid<Real>;

/// Network tensor at deployment precision.
pub type Tensor = nn::Tensor<f32>;
