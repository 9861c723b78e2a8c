use crate::scalar::{s, Scalar};

use super::{centroid, linalg, GeomError, Point3, RigidTransform};

/// Least-squares rigid transform (no scale) mapping `source` onto `target`,
/// minimizing the sum of squared pair distances.
///
/// Requires paired lists of equal length >= 3 with non-collinear geometry.
pub fn estimate_rigid_transform<T: Scalar>(
    source: &[Point3<T>],
    target: &[Point3<T>],
) -> Result<RigidTransform<T>, GeomError> {
    if source.len() != target.len() {
        return Err(GeomError::DegenerateTransform("length mismatch"));
    }
    if source.len() < 3 {
        return Err(GeomError::DegenerateTransform("fewer than 3 pairs"));
    }
    let sc = centroid(source);
    let tc = centroid(target);

    // Cross-covariance H = sum (p - sc)(q - tc)^T.
    let mut h = [[T::zero(); 3]; 3];
    for (p, q) in source.iter().zip(target.iter()) {
        let a = (*p - sc).to_array();
        let b = (*q - tc).to_array();
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] += a[i] * b[j];
            }
        }
    }

    // SVD via the eigen-decomposition of H^T H.
    let mut hth = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                hth[i][j] += h[k][i] * h[k][j];
            }
        }
    }
    let (lambda, mut v) = linalg::eig_sym3(&hth);
    let sigma = [
        lambda[0].max(T::zero()).sqrt(),
        lambda[1].max(T::zero()).sqrt(),
        lambda[2].max(T::zero()).sqrt(),
    ];
    if sigma[0] <= T::zero() {
        return Err(GeomError::DegenerateTransform("zero spread"));
    }
    let tol = sigma[0] * s(1e-9);
    if sigma[1] <= tol {
        return Err(GeomError::DegenerateTransform("collinear configuration"));
    }
    if det3(&v) < T::zero() {
        for row in v.iter_mut() {
            row[2] = -row[2];
        }
    }

    let col = |m: &[[T; 3]; 3], j: usize| Point3::new(m[0][j], m[1][j], m[2][j]);
    let mul = |m: &[[T; 3]; 3], x: &Point3<T>| {
        Point3::new(
            m[0][0] * x.x + m[0][1] * x.y + m[0][2] * x.z,
            m[1][0] * x.x + m[1][1] * x.y + m[1][2] * x.z,
            m[2][0] * x.x + m[2][1] * x.y + m[2][2] * x.z,
        )
    };

    let u1 = mul(&h, &col(&v, 0)).scaled(T::one() / sigma[0]);
    let u2 = mul(&h, &col(&v, 1)).scaled(T::one() / sigma[1]);
    let u3 = if sigma[2] > tol {
        mul(&h, &col(&v, 2)).scaled(T::one() / sigma[2])
    } else {
        u1.cross(&u2)
    };
    let u = [
        [u1.x, u2.x, u3.x],
        [u1.y, u2.y, u3.y],
        [u1.z, u2.z, u3.z],
    ];
    let d = if det3(&u) < T::zero() { -T::one() } else { T::one() };

    // R = V diag(1, 1, d) U^T.
    let mut r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = v[i][0] * u[j][0] + v[i][1] * u[j][1] + d * v[i][2] * u[j][2];
        }
    }
    let rot = RigidTransform { rotation: r, translation: Point3::zero() };
    let t = tc - rot.rotate(&sc);
    Ok(RigidTransform { rotation: r, translation: t })
}

fn det3<T: Scalar>(m: &[[T; 3]; 3]) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
