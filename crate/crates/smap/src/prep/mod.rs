//! Alignment, scaling and voxelization of segment observations into the fixed
//! 32x32x16 network input grid, plus training-time augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::pca_2d;
use crate::segmentation::SegmentObservation;
use crate::{Point3, Real};

/// Fixed input grid dimensions (x, y, z).
pub const GRID_CELLS: [usize; 3] = [32, 32, 16];
/// Total cell count of the input grid.
pub const GRID_VOLUME: usize = GRID_CELLS[0] * GRID_CELLS[1] * GRID_CELLS[2];
/// Minimum voxel side length in meters; sides grow per axis to fit segments.
pub const MIN_SIDE: Real = 0.1;

/// Points in the canonical descriptor frame: centered on the centroid, major
/// x-y eigenvector along x, heavier half along negative y.
#[derive(Debug, Clone)]
pub struct AlignedCloud {
    pub points: Vec<Point3>,
    /// Yaw such that `aligned = Rz(-angle) * (p - centroid)`, with the 180
    /// degree flip folded in; range `(-pi, pi]`.
    pub angle: Real,
    /// Original centroid in the world frame.
    pub centroid: Point3,
    /// PCA was degenerate and identity alignment was used.
    pub degenerate: bool,
    pub segment_id: u64,
    pub observation: usize,
}

/// Aligns an observation: center on the centroid, rotate the dominant x-y
/// eigenvector onto the x axis, then resolve the 180 degree ambiguity so the
/// half-space y < 0 holds strictly more points (exact ties keep the
/// un-flipped orientation).
pub fn align(obs: &SegmentObservation) -> AlignedCloud {
    let c = obs.centroid;
    let (angle, degenerate) = match pca_2d(&obs.points) {
        Ok(p) => (p.angle, false),
        Err(_) => (0.0, true),
    };
    let (sn, cs) = (-angle).sin_cos();
    let mut points: Vec<Point3> = obs
        .points
        .iter()
        .map(|p| {
            let d = *p - c;
            Point3::new(cs * d.x - sn * d.y, sn * d.x + cs * d.y, d.z)
        })
        .collect();
    let below = points.iter().filter(|p| p.y < 0.0).count();
    let above = points.iter().filter(|p| p.y > 0.0).count();
    let mut total = angle;
    if below < above {
        // Exact 180 degree flip; avoids sin(pi) rounding.
        for p in points.iter_mut() {
            p.x = -p.x;
            p.y = -p.y;
        }
        total += std::f64::consts::PI;
    }
    if total > std::f64::consts::PI {
        total -= 2.0 * std::f64::consts::PI;
    }
    AlignedCloud {
        points,
        angle: total,
        centroid: c,
        degenerate,
        segment_id: obs.segment_id,
        observation: obs.observation,
    }
}

/// Aligned, scaled binary occupancy grid with its scale metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelizedSegment {
    /// Sorted unique linear cell indices; `((ix * 32) + iy) * 16 + iz`.
    pub occupied: Vec<u16>,
    /// Per-axis voxel side lengths, meters.
    pub sides: [Real; 3],
    /// Original (world) centroid of the observation.
    pub centroid: Point3,
    /// Alignment yaw recorded by [`align`].
    pub angle: Real,
    pub segment_id: u64,
    pub observation: usize,
}

impl VoxelizedSegment {
    pub fn linear(ix: usize, iy: usize, iz: usize) -> u16 {
        ((ix * GRID_CELLS[1] + iy) * GRID_CELLS[2] + iz) as u16
    }

    pub fn unpack(linear: u16) -> (usize, usize, usize) {
        let l = linear as usize;
        let iz = l % GRID_CELLS[2];
        let iy = (l / GRID_CELLS[2]) % GRID_CELLS[1];
        let ix = l / (GRID_CELLS[1] * GRID_CELLS[2]);
        (ix, iy, iz)
    }

    /// Scale vector passed to the network: per-axis sides over the minimum.
    pub fn scale_vector(&self) -> [Real; 3] {
        [
            self.sides[0] / MIN_SIDE,
            self.sides[1] / MIN_SIDE,
            self.sides[2] / MIN_SIDE,
        ]
    }

    pub fn occupied_fraction(&self) -> Real {
        self.occupied.len() as Real / GRID_VOLUME as Real
    }

    /// Writes the binary occupancy into a dense `GRID_VOLUME` slice.
    pub fn fill_dense<T: crate::Scalar>(&self, out: &mut [T]) {
        debug_assert_eq!(out.len(), GRID_VOLUME);
        for v in out.iter_mut() {
            *v = T::zero();
        }
        for &cell in &self.occupied {
            out[cell as usize] = T::one();
        }
    }

    /// Center of an occupied cell in the aligned frame.
    pub fn cell_center(&self, linear: u16) -> Point3 {
        let (ix, iy, iz) = Self::unpack(linear);
        Point3::new(
            (ix as Real + 0.5 - GRID_CELLS[0] as Real / 2.0) * self.sides[0],
            (iy as Real + 0.5 - GRID_CELLS[1] as Real / 2.0) * self.sides[1],
            (iz as Real + 0.5 - GRID_CELLS[2] as Real / 2.0) * self.sides[2],
        )
    }
}

/// Voxelizes an aligned cloud: the grid is centered on the centroid and each
/// axis side is `max(0.1, extent / cells)`, so every point bins in bounds
/// (boundary points clamp to the outermost cell).
pub fn voxelize(aligned: &AlignedCloud) -> VoxelizedSegment {
    assert!(!aligned.points.is_empty(), "voxelize needs a non-empty cloud");
    let (lo, hi) = bounds(&aligned.points);
    let extents = [hi.x - lo.x, hi.y - lo.y, hi.z - lo.z];
    let mut sides = [MIN_SIDE; 3];
    for a in 0..3 {
        sides[a] = (extents[a] / GRID_CELLS[a] as Real).max(MIN_SIDE);
    }
    let mut occupied: Vec<u16> = aligned
        .points
        .iter()
        .map(|p| {
            let bin = |v: Real, side: Real, cells: usize| -> usize {
                let i = (v / side).floor() + cells as Real / 2.0;
                (i.max(0.0) as usize).min(cells - 1)
            };
            let ix = bin(p.x, sides[0], GRID_CELLS[0]);
            let iy = bin(p.y, sides[1], GRID_CELLS[1]);
            let iz = bin(p.z, sides[2], GRID_CELLS[2]);
            VoxelizedSegment::linear(ix, iy, iz)
        })
        .collect();
    occupied.sort_unstable();
    occupied.dedup();
    VoxelizedSegment {
        occupied,
        sides,
        centroid: aligned.centroid,
        angle: aligned.angle,
        segment_id: aligned.segment_id,
        observation: aligned.observation,
    }
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Rotated copies: uniform random yaws applied after alignment.
    pub rotations: usize,
    /// Sliced copies simulating occlusion; each keeps at least half the
    /// points.
    pub slices: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { rotations: 5, slices: 5, seed: 0 }
    }
}

/// Augmentation output: the original aligned cloud first, then rotated and
/// sliced copies, all ready for [`voxelize`].
#[derive(Debug)]
pub struct Augmented {
    pub clouds: Vec<AlignedCloud>,
    /// Sliced copies dropped after exhausting the retry cap.
    pub slices_skipped: usize,
}

fn augment_rng(cfg: &AugmentConfig, segment_id: u64, observation: usize, salt: u64) -> ChaCha8Rng {
    let mut h = cfg.seed ^ 0x517cc1b727220a95;
    for v in [segment_id, observation as u64, salt] {
        h ^= v.wrapping_mul(0x2545f4914f6cdd1d);
        h = h.rotate_left(23).wrapping_mul(0x9e3779b97f4a7c15);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Generates augmented training copies of one observation, prior to
/// voxelization: yaw-rotated copies keep the alignment frame (simulating
/// alignment noise); sliced copies drop points on one side of a random plane
/// (keeping at least 50%) and are re-aligned like a genuinely occluded
/// segment. Deterministic for a fixed seed.
pub fn augment(obs: &SegmentObservation, cfg: &AugmentConfig) -> Augmented {
    let base = align(obs);
    let mut clouds = Vec::with_capacity(1 + cfg.rotations + cfg.slices);
    clouds.push(base.clone());
    let mut rng = augment_rng(cfg, obs.segment_id, obs.observation, 1);
    for _ in 0..cfg.rotations {
        let yaw: Real = rng.gen_range(0.0..std::f64::consts::TAU);
        let (sn, cs) = yaw.sin_cos();
        let points: Vec<Point3> = base
            .points
            .iter()
            .map(|p| Point3::new(cs * p.x - sn * p.y, sn * p.x + cs * p.y, p.z))
            .collect();
        clouds.push(AlignedCloud { points, ..base.clone() });
    }

    let mut slices_skipped = 0;
    let mut rng = augment_rng(cfg, obs.segment_id, obs.observation, 2);
    let (lo, hi) = bounds(&obs.points);
    for _ in 0..cfg.slices {
        let mut kept: Option<Vec<Point3>> = None;
        for _attempt in 0..20 {
            let q = Point3::new(
                rng.gen_range(lo.x..=hi.x),
                rng.gen_range(lo.y..=hi.y),
                rng.gen_range(lo.z..=hi.z),
            );
            let n = random_unit(&mut rng);
            let side: Vec<Point3> = obs
                .points
                .iter()
                .filter(|p| (**p - q).dot(&n) >= 0.0)
                .copied()
                .collect();
            if 2 * side.len() >= obs.points.len() && !side.is_empty() {
                kept = Some(side);
                break;
            }
        }
        match kept {
            Some(points) => {
                let sliced = SegmentObservation::from_points(
                    obs.segment_id,
                    obs.observation,
                    points,
                    obs.timestamp,
                );
                clouds.push(align(&sliced));
            }
            None => slices_skipped += 1,
        }
    }
    Augmented { clouds, slices_skipped }
}

fn bounds(points: &[Point3]) -> (Point3, Point3) {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        lo.z = lo.z.min(p.z);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
        hi.z = hi.z.max(p.z);
    }
    (lo, hi)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = Point3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v.scaled(1.0 / n);
        }
    }
}
