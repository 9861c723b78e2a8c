//! Descriptor providers and their training: the learned combined-objective
//! descriptor, the autoencoder-only baseline, the eigenvalue-feature
//! baseline, decoder-based reconstruction and the semantic head.

mod eigen;
mod model;
mod semantic;
mod training;

pub use eigen::describe_eigen;
pub use model::{ArchConfig, SegModel};
pub use semantic::{train_semantic, SemanticHead, SemanticTrainConfig};
pub use training::{
    train_autoencoder, train_segmap, write_curves, EpochStats, TrainConfig, TrainingSet,
};

use crate::{Point3, Real};
use thiserror::Error;

/// Which pipeline produced a descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderKind {
    /// Learned descriptor trained under the combined retrieval +
    /// reconstruction objective.
    SegMap,
    /// Same architecture trained for reconstruction only.
    Autoencoder,
    /// Hand-crafted eigenvalue features.
    Eigen,
}

impl ProviderKind {
    pub fn tag(&self) -> u8 {
        match self {
            ProviderKind::SegMap => 0,
            ProviderKind::Autoencoder => 1,
            ProviderKind::Eigen => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ProviderKind::SegMap),
            1 => Some(ProviderKind::Autoencoder),
            2 => Some(ProviderKind::Eigen),
            _ => None,
        }
    }
}

/// Semantic classes distinguished by the semantic head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SemanticClass {
    Vehicle,
    Building,
    Other,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 3] =
        [SemanticClass::Vehicle, SemanticClass::Building, SemanticClass::Other];

    pub fn tag(&self) -> u8 {
        match self {
            SemanticClass::Vehicle => 0,
            SemanticClass::Building => 1,
            SemanticClass::Other => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SemanticClass::Vehicle),
            1 => Some(SemanticClass::Building),
            2 => Some(SemanticClass::Other),
            _ => None,
        }
    }

    pub fn index(&self) -> usize {
        self.tag() as usize
    }
}

/// Compact representation of one segment observation: the unit of storage,
/// transmission, retrieval, reconstruction and semantics.
#[derive(Debug, Clone)]
pub struct Descriptor {
    pub values: Vec<f32>,
    pub provider: ProviderKind,
    /// Per-axis voxel sides of the source grid, meters.
    pub scale: [Real; 3],
    /// World-frame centroid of the source observation.
    pub centroid: Point3,
    /// Alignment yaw of the source grid (carried as link metadata).
    pub angle: Real,
    pub segment_id: u64,
    pub observation: usize,
    pub semantic: Option<SemanticClass>,
}

impl Descriptor {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Squared l2 distance in feature space.
    pub fn dist_sq(&self, other: &Descriptor) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum()
    }

    pub fn dist(&self, other: &Descriptor) -> f64 {
        self.dist_sq(other).sqrt()
    }
}

#[derive(Debug, Error)]
pub enum DescriptorError {
    #[error("degenerate covariance: need spread-out points for eigen features")]
    DegenerateCovariance,
    #[error("empty occupancy grid")]
    EmptyGrid,
    #[error("descriptor dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("provider {0:?} does not support this operation")]
    UnsupportedProvider(ProviderKind),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("unknown semantic label {0}")]
    UnknownLabel(u8),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}
