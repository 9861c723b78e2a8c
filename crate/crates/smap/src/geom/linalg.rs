//! Small dense linear algebra: symmetric eigensolvers sized for covariance
//! matrices and a Cholesky solve for the pose-graph normal equations.

use crate::scalar::{s, Scalar};

/// Eigen-decomposition of a symmetric 2x2 matrix `[[a, b], [b, c]]`.
///
/// Returns eigenvalues sorted descending and the angle of the eigenvector of
/// the largest one, normalized into `(-pi/2, pi/2]`.
pub fn eig_sym2<T: Scalar>(a: T, b: T, c: T) -> ([T; 2], T) {
    let half = s::<T>(0.5);
    let mean = (a + c) * half;
    let diff = (a - c) * half;
    let rad = (diff * diff + b * b).sqrt();
    let l1 = mean + rad;
    let l2 = mean - rad;
    // Eigenvector for l1: angle from atan2 of the major axis direction.
    let two = s::<T>(2.0);
    let mut angle = (two * b).atan2(a - c) * half;
    // Map into (-pi/2, pi/2]; the direction is a line, not a ray.
    let pi = T::PI();
    if angle <= -pi * half {
        angle += pi;
    } else if angle > pi * half {
        angle -= pi;
    }
    ([l1, l2], angle)
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues desc, eigenvectors as columns)` with `m v_i =
/// lambda_i v_i`.
pub fn eig_sym3<T: Scalar>(m: &[[T; 3]; 3]) -> ([T; 3], [[T; 3]; 3]) {
    let mut a = *m;
    let mut v = [[T::zero(); 3]; 3];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = T::one();
    }
    for _sweep in 0..50 {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        let scale = a[0][0].abs().max(a[1][1].abs()).max(a[2][2].abs()).max(T::one());
        if off <= scale * s(1e-15) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (s::<T>(2.0) * apq);
            let t = if theta >= T::zero() {
                T::one() / (theta + (T::one() + theta * theta).sqrt())
            } else {
                -T::one() / (-theta + (T::one() + theta * theta).sqrt())
            };
            let c = T::one() / (T::one() + t * t).sqrt();
            let sn = t * c;
            // Rotate rows/columns p and q.
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - sn * akq;
                a[k][q] = sn * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - sn * aqk;
                a[q][k] = sn * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = c * vkp - sn * vkq;
                row[q] = sn * vkp + c * vkq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        a[j][j].partial_cmp(&a[i][i]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let mut vecs = [[T::zero(); 3]; 3];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..3 {
            vecs[k][dst] = v[k][src];
        }
    }
    (vals, vecs)
}

/// Solves `A x = b` in place for a symmetric positive-definite `A` (row-major,
/// dense) via Cholesky. Returns `None` when a pivot collapses.
pub fn cholesky_solve(a: &mut [f64], b: &mut [f64], n: usize) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    // In-place lower-triangular factorization.
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        let diag = d.sqrt();
        a[j * n + j] = diag;
        for i in (j + 1)..n {
            let mut sum = a[i * n + j];
            let (row_i, row_j) = (i * n, j * n);
            for k in 0..j {
                sum -= a[row_i + k] * a[row_j + k];
            }
            a[i * n + j] = sum / diag;
        }
    }
    // Forward substitution L y = b.
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= a[i * n + k] * b[k];
        }
        b[i] = sum / a[i * n + i];
    }
    // Back substitution L^T x = y.
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= a[k * n + i] * b[k];
        }
        b[i] = sum / a[i * n + i];
    }
    Some(())
}
