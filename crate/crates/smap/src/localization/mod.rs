//! Global segment map maintenance, k-NN candidate retrieval, geometric
//! consistency verification, transform estimation and batch pose-graph
//! optimization.

pub mod map_io;
mod pose_graph;

pub use pose_graph::{BetweenFactor, FactorKind, OptimizeReport, PoseGraph};

use std::collections::HashMap;

use crate::descriptors::{Descriptor, ProviderKind, SemanticClass};
use crate::geom::estimate_rigid_transform;
use crate::{Point3, Real, RigidTransform};
use thiserror::Error;

/// Map-wide identity of a segment: ids are only unique per robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentKey {
    pub robot: u32,
    pub segment: u64,
}

/// One segment in the global map: its centroid, latest descriptor and
/// bookkeeping needed for compression accounting and reconstruction.
#[derive(Debug, Clone)]
pub struct MapEntry {
    pub key: SegmentKey,
    pub centroid: Point3,
    pub descriptor: Descriptor,
    pub semantic: Option<SemanticClass>,
    /// Points of the latest observation (raw-map size accounting).
    pub point_count: u32,
    pub observation: usize,
    pub timestamp: f64,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("stale update for segment {key:?}: observation {got} < {have}")]
    Stale { key: SegmentKey, got: usize, have: usize },
    #[error("descriptor dimension {got} does not match map dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("descriptor provider {got:?} does not match map provider {expected:?}")]
    ProviderMismatch { expected: ProviderKind, got: ProviderKind },
    #[error("map I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed map file: {0}")]
    Format(String),
}

/// Centroid + descriptor map accumulated online; exactly one entry per
/// segment key, always the latest observation's.
#[derive(Debug, Clone, Default)]
pub struct GlobalSegmentMap {
    entries: HashMap<SegmentKey, MapEntry>,
}

impl GlobalSegmentMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &SegmentKey) -> Option<&MapEntry> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MapEntry> {
        self.entries.values()
    }

    /// Entries sorted by key; the canonical order for files and scans.
    pub fn sorted_entries(&self) -> Vec<&MapEntry> {
        let mut v: Vec<&MapEntry> = self.entries.values().collect();
        v.sort_by_key(|e| e.key);
        v
    }

    pub fn provider(&self) -> Option<ProviderKind> {
        self.entries.values().next().map(|e| e.descriptor.provider)
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(|e| e.descriptor.dim())
    }

    /// Inserts or replaces the entry for a segment; rejects stale updates
    /// (older observation index than what the map holds).
    pub fn update(&mut self, entry: MapEntry) -> Result<(), MapError> {
        if let Some(dim) = self.dim() {
            if entry.descriptor.dim() != dim {
                return Err(MapError::DimensionMismatch { expected: dim, got: entry.descriptor.dim() });
            }
        }
        if let Some(provider) = self.provider() {
            if entry.descriptor.provider != provider {
                return Err(MapError::ProviderMismatch {
                    expected: provider,
                    got: entry.descriptor.provider,
                });
            }
        }
        if let Some(existing) = self.entries.get(&entry.key) {
            if entry.observation < existing.observation {
                return Err(MapError::Stale {
                    key: entry.key,
                    got: entry.observation,
                    have: existing.observation,
                });
            }
        }
        self.entries.insert(entry.key, entry);
        Ok(())
    }

    /// Removes a segment (e.g. retracted after a merge).
    pub fn remove(&mut self, key: &SegmentKey) -> Option<MapEntry> {
        self.entries.remove(key)
    }

    /// Total points across entries; the raw-map size basis.
    pub fn total_points(&self) -> u64 {
        self.entries.values().map(|e| e.point_count as u64).sum()
    }
}

/// One retrieval hit.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub key: SegmentKey,
    pub distance: f64,
}

/// Exact k-nearest-neighbour retrieval by l2 distance in descriptor space,
/// after removing excluded semantic classes. Result order is identical to a
/// full linear scan sorted by (distance, key).
pub fn retrieve_candidates(
    map: &GlobalSegmentMap,
    queries: &[Descriptor],
    k: usize,
    exclude_classes: &[SemanticClass],
) -> Result<Vec<Vec<Candidate>>, MapError> {
    retrieve_candidates_filtered(map, queries, k, exclude_classes, |_| true)
}

/// Retrieval with an extra entry filter (used to exclude a robot's own
/// still-active segments from its queries).
pub fn retrieve_candidates_filtered(
    map: &GlobalSegmentMap,
    queries: &[Descriptor],
    k: usize,
    exclude_classes: &[SemanticClass],
    keep: impl Fn(&MapEntry) -> bool,
) -> Result<Vec<Vec<Candidate>>, MapError> {
    let entries = map.sorted_entries();
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        if let Some(dim) = map.dim() {
            if q.dim() != dim {
                return Err(MapError::DimensionMismatch { expected: dim, got: q.dim() });
            }
        }
        let mut hits: Vec<Candidate> = entries
            .iter()
            .filter(|e| {
                e.semantic.map_or(true, |s| !exclude_classes.contains(&s)) && keep(e)
            })
            .map(|e| Candidate { key: e.key, distance: q.dist(&e.descriptor) })
            .collect();
        hits.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.key.cmp(&b.key))
        });
        hits.truncate(k);
        out.push(hits);
    }
    Ok(out)
}

/// A candidate match between a local segment and a map entry.
#[derive(Debug, Clone)]
pub struct CandidatePair {
    pub local_id: u64,
    pub global: SegmentKey,
    pub local_centroid: Point3,
    pub global_centroid: Point3,
}

/// Output of a successful geometric verification.
#[derive(Debug, Clone)]
pub struct LocalizationResult {
    /// (local segment id, global segment key) for every consistent pair.
    pub pairs: Vec<(u64, SegmentKey)>,
    /// Transform mapping local centroids onto global centroids.
    pub transform: RigidTransform,
    pub consistency_size: usize,
    pub timestamp: f64,
}

/// Finds the largest pairwise-consistent candidate subset and estimates the
/// 6-DoF transform from it.
///
/// Consistency between two candidate pairs demands centroid-to-centroid
/// distance preservation within `epsilon` and distinct local ids and map
/// keys. The subset search is a greedy clique construction seeded at the
/// highest-degree vertex (ties to the smallest id); the result is invariant
/// to candidate input order.
pub fn geometric_verify(
    candidates: &[CandidatePair],
    epsilon: Real,
    min_correspondences: usize,
    timestamp: f64,
) -> Option<LocalizationResult> {
    let n = candidates.len();
    if n < min_correspondences || min_correspondences == 0 {
        return None;
    }
    // Canonical order: by (local id, global key) so seeding is input-order
    // invariant.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (candidates[i].local_id, candidates[i].global));
    let cand: Vec<&CandidatePair> = order.iter().map(|&i| &candidates[i]).collect();

    let consistent = |a: &CandidatePair, b: &CandidatePair| -> bool {
        if a.local_id == b.local_id || a.global == b.global {
            return false;
        }
        let dl = a.local_centroid.dist(&b.local_centroid);
        let dg = a.global_centroid.dist(&b.global_centroid);
        (dl - dg).abs() <= epsilon
    };
    let mut adj = vec![vec![false; n]; n];
    let mut degree = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if consistent(cand[i], cand[j]) {
                adj[i][j] = true;
                adj[j][i] = true;
                degree[i] += 1;
                degree[j] += 1;
            }
        }
    }
    let seed = (0..n).max_by_key(|&i| (degree[i], std::cmp::Reverse(i)))?;
    let mut clique = vec![seed];
    loop {
        let mut best: Option<usize> = None;
        for v in 0..n {
            if clique.contains(&v) {
                continue;
            }
            if clique.iter().all(|&c| adj[c][v]) {
                let better = match best {
                    None => true,
                    Some(b) => degree[v] > degree[b] || (degree[v] == degree[b] && v < b),
                };
                if better {
                    best = Some(v);
                }
            }
        }
        match best {
            Some(v) => clique.push(v),
            None => break,
        }
    }
    if clique.len() < min_correspondences {
        return None;
    }
    clique.sort_unstable();
    let local: Vec<Point3> = clique.iter().map(|&i| cand[i].local_centroid).collect();
    let global: Vec<Point3> = clique.iter().map(|&i| cand[i].global_centroid).collect();
    let transform = estimate_rigid_transform(&local, &global).ok()?;
    Some(LocalizationResult {
        pairs: clique
            .iter()
            .map(|&i| (cand[i].local_id, cand[i].global))
            .collect(),
        transform,
        consistency_size: clique.len(),
        timestamp,
    })
}

#[cfg(test)]
mod tests;
