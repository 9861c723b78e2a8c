//! Incremental Euclidean region growing over newly-active voxels, producing
//! growing segment tracks within radius R of the robot.
//!
//! Segment membership is defined at point level: two points belong to the
//! same segment when they are linked by a chain of points with pairwise gaps
//! of at most `growing_radius`. The incremental algorithm reproduces the
//! connected components of that graph as long as
//! `voxel_side * sqrt(3) <= growing_radius`, since voxels are its merge unit.

use std::collections::HashMap;

use crate::geom::{InsertReport, VoxelIndex};
use crate::DynamicVoxelGrid;
use crate::{Point3, Real};

/// Snapshot of one growing segment at a point in time.
#[derive(Debug, Clone)]
pub struct SegmentObservation {
    pub segment_id: u64,
    /// Index of this snapshot within its track, starting at 0.
    pub observation: usize,
    /// World-frame points.
    pub points: Vec<Point3>,
    pub centroid: Point3,
    pub timestamp: f64,
}

impl SegmentObservation {
    pub fn from_points(segment_id: u64, observation: usize, points: Vec<Point3>, timestamp: f64) -> Self {
        let centroid = crate::geom::centroid(&points);
        Self { segment_id, observation, points, centroid, timestamp }
    }
}

/// Ordered observations of one physical segment.
#[derive(Debug, Clone)]
pub struct SegmentTrack {
    pub id: u64,
    pub observations: Vec<SegmentObservation>,
    pub complete: bool,
}

impl SegmentTrack {
    pub fn last(&self) -> &SegmentObservation {
        self.observations.last().expect("track has at least one observation")
    }
}

/// Marks a track complete when every point of its latest observation lies
/// farther than `radius` from `robot_position`. Idempotent.
pub fn mark_complete(mut track: SegmentTrack, robot_position: &Point3, radius: Real) -> SegmentTrack {
    if track.complete {
        return track;
    }
    let r2 = radius * radius;
    let all_far = track
        .last()
        .points
        .iter()
        .all(|p| p.dist_sq(robot_position) > r2);
    if all_far {
        track.complete = true;
    }
    track
}

/// Removes ground returns: transforms `cloud` by `robot_pose` into the world
/// frame, estimates the local ground as the per-cell minimum z over a 1 m
/// planar grid, and keeps points more than `z_threshold` above that estimate.
pub fn remove_ground(cloud: &[Point3], robot_pose: &crate::RigidTransform, z_threshold: Real) -> Vec<Point3> {
    if cloud.is_empty() {
        return Vec::new();
    }
    let world: Vec<Point3> = cloud.iter().map(|p| robot_pose.apply(p)).collect();
    let mut min_z: HashMap<(i64, i64), Real> = HashMap::new();
    for p in &world {
        let key = (p.x.floor() as i64, p.y.floor() as i64);
        min_z
            .entry(key)
            .and_modify(|z| *z = z.min(p.z))
            .or_insert(p.z);
    }
    world
        .into_iter()
        .filter(|p| {
            let key = (p.x.floor() as i64, p.y.floor() as i64);
            p.z - min_z[&key] > z_threshold
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SegmenterConfig {
    /// Accumulation voxel side, meters.
    pub voxel_side: Real,
    /// Points required before a voxel activates.
    pub activation_threshold: usize,
    /// Local-map radius R around the robot, meters.
    pub radius: Real,
    /// Euclidean growing radius, meters.
    pub growing_radius: Real,
    /// Minimum points before a segment emits observations.
    pub min_points: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            voxel_side: 0.1,
            activation_threshold: 1,
            radius: 50.0,
            growing_radius: 0.2,
            min_points: 100,
        }
    }
}

/// Result of one growth step.
#[derive(Debug, Clone, Default)]
pub struct GrowthUpdate {
    /// At most one fresh snapshot per changed segment with enough points.
    pub observations: Vec<SegmentObservation>,
    /// `(survivor, absorbed)` pairs; the absorbed track is retired.
    pub merges: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Default)]
struct SegmentState {
    voxels: Vec<VoxelIndex>,
    point_count: usize,
}

/// Per-robot incremental segmentation state.
#[derive(Debug)]
pub struct Segmenter {
    cfg: SegmenterConfig,
    grid: DynamicVoxelGrid,
    voxel_to_segment: HashMap<VoxelIndex, u64>,
    segments: HashMap<u64, SegmentState>,
    tracks: HashMap<u64, SegmentTrack>,
    next_id: u64,
}

impl Segmenter {
    pub fn new(cfg: SegmenterConfig) -> Self {
        let grid = DynamicVoxelGrid::new(cfg.voxel_side, cfg.activation_threshold);
        Self {
            cfg,
            grid,
            voxel_to_segment: HashMap::new(),
            segments: HashMap::new(),
            tracks: HashMap::new(),
            next_id: 0,
        }
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &DynamicVoxelGrid {
        &self.grid
    }

    /// Number of input points rejected as non-finite so far.
    pub fn skipped_points(&self) -> usize {
        self.grid.skipped_points()
    }

    /// Inserts a ground-removed world-frame cloud and grows segments.
    pub fn ingest(&mut self, world_points: &[Point3], robot_position: &Point3, timestamp: f64) -> GrowthUpdate {
        let report = self
            .grid
            .insert_cloud(world_points, &crate::RigidTransform::identity());
        self.grow_segments(&report, robot_position, timestamp)
    }

    /// Incremental region growing over the newly-active voxels of `report`
    /// (plus points appended to already-active voxels, which can bridge
    /// existing segments).
    pub fn grow_segments(
        &mut self,
        report: &InsertReport,
        robot_position: &Point3,
        timestamp: f64,
    ) -> GrowthUpdate {
        let mut update = GrowthUpdate::default();
        let mut dirty: Vec<u64> = Vec::new();
        let r2 = self.cfg.radius * self.cfg.radius;

        for idx in &report.newly_active {
            if self.grid.center_of(idx).dist_sq(robot_position) > r2 {
                continue;
            }
            let seg = self.assign_voxel(*idx, &mut update.merges, &mut dirty);
            mark_dirty(&mut dirty, seg);
        }
        for (idx, first_new) in &report.appended {
            if let Some(&seg) = self.voxel_to_segment.get(idx) {
                let count_new = self.grid.points_of(idx).map(|p| p.len() - first_new).unwrap_or(0);
                if count_new > 0 {
                    self.segments.get_mut(&seg).expect("segment state").point_count += count_new;
                    self.bridge_from_voxel(*idx, *first_new, seg, &mut update.merges, &mut dirty);
                    mark_dirty(&mut dirty, seg);
                }
            }
        }

        // A dirty id may have been absorbed by a later merge in this call.
        let resolve = |mut id: u64, merges: &[(u64, u64)]| -> u64 {
            loop {
                match merges.iter().find(|(_, absorbed)| *absorbed == id) {
                    Some((survivor, _)) => id = *survivor,
                    None => return id,
                }
            }
        };
        let mut emitted: Vec<u64> = Vec::new();
        for id in dirty {
            let id = resolve(id, &update.merges);
            if emitted.contains(&id) {
                continue;
            }
            let state = &self.segments[&id];
            if state.point_count < self.cfg.min_points {
                continue;
            }
            emitted.push(id);
            let points = self.collect_points(id);
            let track = self.tracks.entry(id).or_insert_with(|| SegmentTrack {
                id,
                observations: Vec::new(),
                complete: false,
            });
            let obs = SegmentObservation::from_points(id, track.observations.len(), points, timestamp);
            track.observations.push(obs.clone());
            update.observations.push(obs);
        }
        update
    }

    /// Completes and retires every live segment whose points all lie farther
    /// than R from the robot. Their voxels leave the local grid, so a revisit
    /// re-segments the area under fresh ids.
    pub fn complete_tracks(&mut self, robot_position: &Point3) -> Vec<SegmentTrack> {
        let r2 = self.cfg.radius * self.cfg.radius;
        let mut done: Vec<u64> = Vec::new();
        for (&id, state) in &self.segments {
            let mut all_far = true;
            'voxels: for v in &state.voxels {
                if let Some(pts) = self.grid.points_of(v) {
                    for p in pts {
                        if p.dist_sq(robot_position) <= r2 {
                            all_far = false;
                            break 'voxels;
                        }
                    }
                }
            }
            if all_far {
                done.push(id);
            }
        }
        done.sort_unstable();
        let mut out = Vec::new();
        for id in done {
            if let Some(track) = self.retire(id) {
                out.push(track);
            }
        }
        out
    }

    /// Retires every remaining segment at end of stream.
    pub fn finalize_all(&mut self) -> Vec<SegmentTrack> {
        let mut ids: Vec<u64> = self.segments.keys().copied().collect();
        ids.sort_unstable();
        let mut out = Vec::new();
        for id in ids {
            if let Some(track) = self.retire(id) {
                out.push(track);
            }
        }
        out
    }

    fn retire(&mut self, id: u64) -> Option<SegmentTrack> {
        let state = self.segments.remove(&id)?;
        for v in &state.voxels {
            self.voxel_to_segment.remove(v);
        }
        self.grid.remove_voxels(&state.voxels);
        let mut track = self.tracks.remove(&id)?;
        track.complete = true;
        Some(track)
    }

    fn collect_points(&self, id: u64) -> Vec<Point3> {
        let state = &self.segments[&id];
        let mut pts = Vec::with_capacity(state.point_count);
        for v in &state.voxels {
            if let Some(p) = self.grid.points_of(v) {
                pts.extend_from_slice(p);
            }
        }
        pts
    }

    /// Assigns a newly active voxel: joins the neighbouring segment(s) its
    /// points touch within the growing radius, merging when it bridges
    /// several; otherwise seeds a fresh segment.
    fn assign_voxel(&mut self, idx: VoxelIndex, merges: &mut Vec<(u64, u64)>, dirty: &mut Vec<u64>) -> u64 {
        let mut touching = self.touching_segments(idx, 0, None);
        let count = self.grid.points_of(&idx).map(|p| p.len()).unwrap_or(0);
        let seg = if touching.is_empty() {
            let id = self.next_id;
            self.next_id += 1;
            self.segments.insert(id, SegmentState::default());
            id
        } else {
            touching.sort_unstable();
            let survivor = touching[0];
            for &other in &touching[1..] {
                self.merge(survivor, other, merges, dirty);
            }
            survivor
        };
        self.voxel_to_segment.insert(idx, seg);
        let state = self.segments.get_mut(&seg).expect("segment state");
        state.voxels.push(idx);
        state.point_count += count;
        seg
    }

    /// New points appended to `idx` (already in `seg`) may bridge to other
    /// segments; merge any they touch.
    fn bridge_from_voxel(
        &mut self,
        idx: VoxelIndex,
        from_offset: usize,
        seg: u64,
        merges: &mut Vec<(u64, u64)>,
        dirty: &mut Vec<u64>,
    ) {
        let mut touching = self.touching_segments(idx, from_offset, Some(seg));
        if touching.is_empty() {
            return;
        }
        touching.push(seg);
        touching.sort_unstable();
        let survivor = touching[0];
        for &other in &touching[1..] {
            self.merge(survivor, other, merges, dirty);
        }
    }

    /// Distinct segments with a point within `growing_radius` of any of the
    /// points `idx[from_offset..]`, excluding `skip`.
    fn touching_segments(&self, idx: VoxelIndex, from_offset: usize, skip: Option<u64>) -> Vec<u64> {
        let Some(my_points) = self.grid.points_of(&idx) else {
            return Vec::new();
        };
        let my_points = &my_points[from_offset..];
        let reach = (self.cfg.growing_radius / self.grid.side()).ceil() as i64;
        let eps2 = self.cfg.growing_radius * self.cfg.growing_radius;
        let mut found: Vec<u64> = Vec::new();
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let nb = [idx[0] + dx, idx[1] + dy, idx[2] + dz];
                    if nb == idx {
                        continue;
                    }
                    let Some(&seg) = self.voxel_to_segment.get(&nb) else {
                        continue;
                    };
                    if Some(seg) == skip || found.contains(&seg) {
                        continue;
                    }
                    let Some(nb_points) = self.grid.points_of(&nb) else {
                        continue;
                    };
                    let touches = my_points
                        .iter()
                        .any(|p| nb_points.iter().any(|q| p.dist_sq(q) <= eps2));
                    if touches {
                        found.push(seg);
                    }
                }
            }
        }
        found
    }

    /// Merges `absorbed` into `survivor`; the survivor is the smaller id.
    fn merge(&mut self, survivor: u64, absorbed: u64, merges: &mut Vec<(u64, u64)>, dirty: &mut Vec<u64>) {
        if survivor == absorbed {
            return;
        }
        let old = self.segments.remove(&absorbed).expect("absorbed segment state");
        for v in &old.voxels {
            self.voxel_to_segment.insert(*v, survivor);
        }
        let state = self.segments.get_mut(&survivor).expect("survivor segment state");
        state.voxels.extend_from_slice(&old.voxels);
        state.point_count += old.point_count;
        self.tracks.remove(&absorbed);
        merges.push((survivor, absorbed));
        mark_dirty(dirty, survivor);
    }
}

fn mark_dirty(dirty: &mut Vec<u64>, id: u64) {
    if !dirty.contains(&id) {
        dirty.push(id);
    }
}
