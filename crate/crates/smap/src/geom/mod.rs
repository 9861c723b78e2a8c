//! Foundational geometry: points, rigid transforms, PCA, convex hulls and the
//! dynamic voxel accumulation grid.

mod hull;
mod kabsch;
pub mod linalg;
mod pca;
mod point;
mod transform;
mod voxel_grid;

pub use hull::{hull_volume, try_convex_hull, ConvexHull};
pub use kabsch::estimate_rigid_transform;
pub use pca::{pca_2d, Pca2};
pub use point::{centroid, Point3};
pub use transform::RigidTransform;
pub use voxel_grid::{DynamicVoxelGrid, InsertReport, VoxelIndex};

use thiserror::Error;

/// Errors raised by geometric routines on degenerate input.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeomError {
    /// All points coincide in the x-y plane; no principal direction exists.
    #[error("degenerate point set: no x-y spread for PCA")]
    DegeneratePca,
    /// Input is coplanar/collinear; no 3D hull exists.
    #[error("degenerate hull: input is coplanar or has fewer than 4 points")]
    DegenerateHull,
    /// Point pairing is collinear or too small for a unique rigid transform.
    #[error("degenerate correspondence set: {0}")]
    DegenerateTransform(&'static str),
}
