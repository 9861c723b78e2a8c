use std::collections::HashMap;

use crate::scalar::Scalar;

use super::{Point3, RigidTransform};

/// Integer voxel coordinates: `floor(p / side)` per axis.
pub type VoxelIndex = [i64; 3];

#[derive(Debug, Clone, Default)]
struct Voxel<T> {
    points: Vec<Point3<T>>,
    active: bool,
}

/// Outcome of one [`DynamicVoxelGrid::insert_cloud`] call.
#[derive(Debug, Clone, Default)]
pub struct InsertReport {
    /// Voxels whose state flipped inactive -> active during this call.
    pub newly_active: Vec<VoxelIndex>,
    /// Already-active voxels that received points; the `usize` is the offset
    /// of the first point appended by this call.
    pub appended: Vec<(VoxelIndex, usize)>,
    /// Non-finite input points rejected.
    pub skipped: usize,
}

/// Sparse accumulation grid. A voxel becomes active once its point count
/// reaches the activation threshold; active voxels seed segment growth.
#[derive(Debug, Clone)]
pub struct DynamicVoxelGrid<T> {
    side: T,
    threshold: usize,
    voxels: HashMap<VoxelIndex, Voxel<T>>,
    stored: usize,
    skipped_total: usize,
}

impl<T: Scalar> DynamicVoxelGrid<T> {
    pub fn new(side: T, activation_threshold: usize) -> Self {
        assert!(side > T::zero(), "voxel side must be positive");
        assert!(activation_threshold >= 1, "activation threshold must be >= 1");
        Self {
            side,
            threshold: activation_threshold,
            voxels: HashMap::new(),
            stored: 0,
            skipped_total: 0,
        }
    }

    pub fn side(&self) -> T {
        self.side
    }

    pub fn index_of(&self, p: &Point3<T>) -> VoxelIndex {
        [
            (p.x / self.side).floor().to_i64().unwrap(),
            (p.y / self.side).floor().to_i64().unwrap(),
            (p.z / self.side).floor().to_i64().unwrap(),
        ]
    }

    /// Center of a voxel in world coordinates.
    pub fn center_of(&self, idx: &VoxelIndex) -> Point3<T> {
        let half = self.side / (T::one() + T::one());
        Point3::new(
            T::from_i64(idx[0]).unwrap() * self.side + half,
            T::from_i64(idx[1]).unwrap() * self.side + half,
            T::from_i64(idx[2]).unwrap() * self.side + half,
        )
    }

    /// Transforms `cloud` by `pose` into the world frame and bins the points.
    /// Non-finite points are skipped and counted.
    pub fn insert_cloud(&mut self, cloud: &[Point3<T>], pose: &RigidTransform<T>) -> InsertReport {
        let mut report = InsertReport::default();
        let mut seen_active: HashMap<VoxelIndex, usize> = HashMap::new();
        for p in cloud {
            let w = pose.apply(p);
            if !w.is_finite() {
                report.skipped += 1;
                self.skipped_total += 1;
                continue;
            }
            let idx = self.index_of(&w);
            let voxel = self.voxels.entry(idx).or_default();
            if voxel.active {
                seen_active.entry(idx).or_insert(voxel.points.len());
            }
            voxel.points.push(w);
            self.stored += 1;
            if !voxel.active && voxel.points.len() >= self.threshold {
                voxel.active = true;
                report.newly_active.push(idx);
            }
        }
        report.appended = seen_active.into_iter().collect();
        report.appended.sort_unstable();
        report
    }

    pub fn is_active(&self, idx: &VoxelIndex) -> bool {
        self.voxels.get(idx).map(|v| v.active).unwrap_or(false)
    }

    pub fn points_of(&self, idx: &VoxelIndex) -> Option<&[Point3<T>]> {
        self.voxels.get(idx).map(|v| v.points.as_slice())
    }

    pub fn active_voxels(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        self.voxels
            .iter()
            .filter(|(_, v)| v.active)
            .map(|(idx, _)| *idx)
    }

    /// Total points currently stored (active and inactive voxels).
    pub fn stored_points(&self) -> usize {
        self.stored
    }

    pub fn skipped_points(&self) -> usize {
        self.skipped_total
    }

    /// Drops the given voxels entirely; returns the number of points removed.
    pub fn remove_voxels(&mut self, indices: &[VoxelIndex]) -> usize {
        let mut removed = 0;
        for idx in indices {
            if let Some(v) = self.voxels.remove(idx) {
                removed += v.points.len();
                self.stored -= v.points.len();
            }
        }
        removed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_activates_origin_voxel() {
        let mut grid = DynamicVoxelGrid::new(0.1, 1);
        let report = grid.insert_cloud(&[Point3::new(0.0, 0.0, 0.0)], &RigidTransform::identity());
        assert_eq!(report.newly_active, vec![[0, 0, 0]]);
        assert_eq!(report.skipped, 0);
    }

    #[test]
    fn threshold_two_activates_on_second_insert() {
        let mut grid = DynamicVoxelGrid::new(0.1, 2);
        let p = [Point3::new(0.05, 0.05, 0.05)];
        let first = grid.insert_cloud(&p, &RigidTransform::identity());
        assert!(first.newly_active.is_empty());
        let second = grid.insert_cloud(&p, &RigidTransform::identity());
        assert_eq!(second.newly_active, vec![[0, 0, 0]]);
    }

    #[test]
    fn non_finite_points_are_skipped() {
        let mut grid = DynamicVoxelGrid::new(0.1, 1);
        let report = grid.insert_cloud(
            &[
                Point3::new(f64::NAN, 0.0, 0.0),
                Point3::new(0.0, f64::INFINITY, 0.0),
                Point3::new(1.0, 1.0, 1.0),
            ],
            &RigidTransform::identity(),
        );
        assert_eq!(report.skipped, 2);
        assert_eq!(grid.stored_points(), 1);
    }

    #[test]
    fn random_points_match_brute_force_binning_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Point3<f64>> = (0..10_000)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(-5.0..5.0),
                )
            })
            .collect();
        let mut grid = DynamicVoxelGrid::new(0.25, 1);
        let report = grid.insert_cloud(&pts, &RigidTransform::identity());

        let mut oracle: std::collections::HashSet<[i64; 3]> = std::collections::HashSet::new();
        for p in &pts {
            oracle.insert([
                (p.x / 0.25).floor() as i64,
                (p.y / 0.25).floor() as i64,
                (p.z / 0.25).floor() as i64,
            ]);
        }
        let got: std::collections::HashSet<[i64; 3]> = report.newly_active.into_iter().collect();
        assert_eq!(got, oracle);
        // Voxel partition: every inserted point is counted in exactly one voxel.
        let total: usize = grid
            .active_voxels()
            .map(|idx| grid.points_of(&idx).unwrap().len())
            .sum();
        assert_eq!(total, pts.len());
    }

    #[test]
    fn appended_reports_new_points_in_active_voxels() {
        let mut grid = DynamicVoxelGrid::new(1.0, 1);
        grid.insert_cloud(&[Point3::new(0.5, 0.5, 0.5)], &RigidTransform::identity());
        let report = grid.insert_cloud(
            &[Point3::new(0.6, 0.5, 0.5), Point3::new(0.7, 0.5, 0.5)],
            &RigidTransform::identity(),
        );
        assert_eq!(report.appended, vec![([0, 0, 0], 1)]);
        assert_eq!(grid.points_of(&[0, 0, 0]).unwrap().len(), 3);
    }
}
