use crate::scalar::{s, Scalar};

use super::{GeomError, Point3};

/// Coplanarity / visibility tolerance for hull construction, in meters.
const HULL_EPS: f64 = 1e-9;

/// Convex hull as a vertex list plus outward-oriented triangle faces.
#[derive(Debug, Clone)]
pub struct ConvexHull<T> {
    pub vertices: Vec<Point3<T>>,
    /// Triangles indexing into `vertices`, wound so normals point outward.
    pub faces: Vec<[usize; 3]>,
}

#[derive(Clone, Copy)]
struct Face<T> {
    idx: [usize; 3],
    normal: Point3<T>,
    offset: T,
}

impl<T: Scalar> Face<T> {
    fn from_indices(idx: [usize; 3], pts: &[Point3<T>]) -> Option<Self> {
        let a = pts[idx[0]];
        let b = pts[idx[1]];
        let c = pts[idx[2]];
        let normal = (b - a).cross(&(c - a)).normalized()?;
        Some(Self { idx, normal, offset: normal.dot(&a) })
    }

    fn signed_dist(&self, p: &Point3<T>) -> T {
        self.normal.dot(p) - self.offset
    }

    fn flipped(&self) -> Self {
        Self {
            idx: [self.idx[0], self.idx[2], self.idx[1]],
            normal: -self.normal,
            offset: -self.offset,
        }
    }
}

/// Incremental 3D convex hull.
///
/// Fails with [`GeomError::DegenerateHull`] for fewer than 4 points or a
/// coplanar/collinear input (within the 1e-9 m tolerance).
pub fn try_convex_hull<T: Scalar>(points: &[Point3<T>]) -> Result<ConvexHull<T>, GeomError> {
    let eps = s::<T>(HULL_EPS);
    if points.len() < 4 {
        return Err(GeomError::DegenerateHull);
    }

    let seed = initial_tetrahedron(points, eps).ok_or(GeomError::DegenerateHull)?;
    let interior = {
        let mut c = Point3::zero();
        for &i in &seed {
            c += points[i];
        }
        c.scaled(T::one() / s(4.0))
    };

    let orient = |f: Face<T>| -> Face<T> {
        if f.signed_dist(&interior) > T::zero() {
            f.flipped()
        } else {
            f
        }
    };

    let mut faces: Vec<Face<T>> = vec![
        [seed[0], seed[1], seed[2]],
        [seed[0], seed[1], seed[3]],
        [seed[0], seed[2], seed[3]],
        [seed[1], seed[2], seed[3]],
    ]
    .into_iter()
    .filter_map(|idx| Face::from_indices(idx, points))
    .map(orient)
    .collect();
    if faces.len() != 4 {
        return Err(GeomError::DegenerateHull);
    }

    for (pi, p) in points.iter().enumerate() {
        if seed.contains(&pi) {
            continue;
        }
        let visible: Vec<usize> = (0..faces.len())
            .filter(|&fi| faces[fi].signed_dist(p) > eps)
            .collect();
        if visible.is_empty() {
            continue;
        }
        // Horizon edges: undirected edges used by exactly one visible face.
        let mut edge_count: std::collections::HashMap<(usize, usize), (usize, usize)> =
            std::collections::HashMap::new();
        for &fi in &visible {
            let idx = faces[fi].idx;
            for k in 0..3 {
                let a = idx[k];
                let b = idx[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                let entry = edge_count.entry(key).or_insert((0, 0));
                entry.0 += 1;
                entry.1 = if a < b { a } else { b }; // remember direction start
            }
        }
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &fi in &visible {
            let idx = faces[fi].idx;
            for k in 0..3 {
                let a = idx[k];
                let b = idx[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                if edge_count[&key].0 == 1 {
                    horizon.push((a, b));
                }
            }
        }
        // Remove visible faces (descending order keeps indices valid).
        for &fi in visible.iter().rev() {
            faces.swap_remove(fi);
        }
        for (a, b) in horizon {
            if let Some(f) = Face::from_indices([a, b, pi], points) {
                faces.push(orient(f));
            }
        }
    }

    // Compact vertex set to the ones referenced by faces.
    let mut remap = std::collections::HashMap::new();
    let mut vertices = Vec::new();
    let mut tri = Vec::with_capacity(faces.len());
    for f in &faces {
        let mut m = [0usize; 3];
        for (slot, &vi) in m.iter_mut().zip(f.idx.iter()) {
            *slot = *remap.entry(vi).or_insert_with(|| {
                vertices.push(points[vi]);
                vertices.len() - 1
            });
        }
        tri.push(m);
    }
    Ok(ConvexHull { vertices, faces: tri })
}

/// Picks 4 well-spread non-coplanar points, or `None` when the set is
/// degenerate at tolerance `eps`.
fn initial_tetrahedron<T: Scalar>(points: &[Point3<T>], eps: T) -> Option<[usize; 4]> {
    // Farthest pair among the six axis extremes.
    let mut extremes = [0usize; 6];
    for (i, p) in points.iter().enumerate() {
        if p.x < points[extremes[0]].x { extremes[0] = i; }
        if p.x > points[extremes[1]].x { extremes[1] = i; }
        if p.y < points[extremes[2]].y { extremes[2] = i; }
        if p.y > points[extremes[3]].y { extremes[3] = i; }
        if p.z < points[extremes[4]].z { extremes[4] = i; }
        if p.z > points[extremes[5]].z { extremes[5] = i; }
    }
    let (mut i0, mut i1) = (extremes[0], extremes[1]);
    let mut best = T::zero();
    for &a in &extremes {
        for &b in &extremes {
            let d = points[a].dist_sq(&points[b]);
            if d > best {
                best = d;
                i0 = a;
                i1 = b;
            }
        }
    }
    if best.sqrt() <= eps {
        return None;
    }
    // Farthest point from the line (i0, i1).
    let dir = (points[i1] - points[i0]).normalized()?;
    let mut i2 = i0;
    let mut best = T::zero();
    for (i, p) in points.iter().enumerate() {
        let v = *p - points[i0];
        let d = v.cross(&dir).norm();
        if d > best {
            best = d;
            i2 = i;
        }
    }
    if best <= eps {
        return None;
    }
    // Farthest point from the plane (i0, i1, i2).
    let n = (points[i1] - points[i0])
        .cross(&(points[i2] - points[i0]))
        .normalized()?;
    let mut i3 = i0;
    let mut best = T::zero();
    for (i, p) in points.iter().enumerate() {
        let d = n.dot(&(*p - points[i0])).abs();
        if d > best {
            best = d;
            i3 = i;
        }
    }
    if best <= eps {
        return None;
    }
    Some([i0, i1, i2, i3])
}

/// Volume by signed tetrahedra fanned from the vertex centroid.
pub fn hull_volume<T: Scalar>(hull: &ConvexHull<T>) -> T {
    if hull.faces.is_empty() {
        return T::zero();
    }
    let c = super::centroid(&hull.vertices);
    let six = s::<T>(6.0);
    let mut vol = T::zero();
    for f in &hull.faces {
        let a = hull.vertices[f[0]] - c;
        let b = hull.vertices[f[1]] - c;
        let d = hull.vertices[f[2]] - c;
        vol += a.dot(&b.cross(&d)) / six;
    }
    vol.abs()
}

impl<T: Scalar> ConvexHull<T> {
    /// True when `p` lies inside or within `tol` of every face plane.
    pub fn contains(&self, p: &Point3<T>, tol: T) -> bool {
        for f in &self.faces {
            let a = self.vertices[f[0]];
            let b = self.vertices[f[1]];
            let c = self.vertices[f[2]];
            if let Some(n) = (b - a).cross(&(c - a)).normalized() {
                if n.dot(&(*p - a)) > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point3<T>, Point3<T>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo.x = lo.x.min(v.x);
            lo.y = lo.y.min(v.y);
            lo.z = lo.z.min(v.z);
            hi.x = hi.x.max(v.x);
            hi.y = hi.y.max(v.y);
            hi.z = hi.z.max(v.z);
        }
        (lo, hi)
    }
}
