use crate::scalar::{s, Scalar};

use super::{linalg, GeomError, Point3};

/// Result of a 2D principal-components analysis over the x-y plane.
#[derive(Debug, Clone, Copy)]
pub struct Pca2<T> {
    /// Angle of the dominant eigenvector, in `(-pi/2, pi/2]`.
    pub angle: T,
    /// Eigenvalues of the x-y covariance, sorted descending.
    pub eigenvalues: [T; 2],
}

/// 2D PCA of the x-y footprint of a point set.
///
/// Fails with [`GeomError::DegeneratePca`] when the points have no x-y
/// spread, in which case callers fall back to identity alignment.
pub fn pca_2d<T: Scalar>(points: &[Point3<T>]) -> Result<Pca2<T>, GeomError> {
    if points.len() < 2 {
        return Err(GeomError::DegeneratePca);
    }
    let n = T::from_usize(points.len()).unwrap();
    let mut mx = T::zero();
    let mut my = T::zero();
    for p in points {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    let mut cxx = T::zero();
    let mut cxy = T::zero();
    let mut cyy = T::zero();
    for p in points {
        let dx = p.x - mx;
        let dy = p.y - my;
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
    }
    cxx /= n;
    cxy /= n;
    cyy /= n;
    let trace = cxx + cyy;
    if trace <= s(1e-18) {
        return Err(GeomError::DegeneratePca);
    }
    let (eigenvalues, angle) = linalg::eig_sym2(cxx, cxy, cyy);
    let mut eigenvalues = eigenvalues;
    // Clamp tiny negatives from round-off.
    for e in eigenvalues.iter_mut() {
        if *e < T::zero() {
            *e = T::zero();
        }
    }
    Ok(Pca2 { angle, eigenvalues })
}
