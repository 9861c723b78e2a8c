use crate::geom::linalg::eig_sym3;
use crate::{Point3, Real};

use super::{Descriptor, DescriptorError, ProviderKind};

/// Eigenvalue-based point-cloud features: a 7-value descriptor computed from
/// the covariance eigenvalues normalized to sum one (e1 >= e2 >= e3):
/// linearity, planarity, scattering, omnivariance, anisotropy, eigenentropy
/// and change of curvature.
pub fn describe_eigen(
    points: &[Point3],
    segment_id: u64,
    observation: usize,
) -> Result<Descriptor, DescriptorError> {
    if points.len() < 4 {
        return Err(DescriptorError::DegenerateCovariance);
    }
    let c = crate::geom::centroid(points);
    let n = points.len() as Real;
    let mut cov = [[0.0; 3]; 3];
    for p in points {
        let d = (*p - c).to_array();
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let (eig, _) = eig_sym3(&cov);
    let sum: Real = eig.iter().map(|e| e.max(0.0)).sum();
    if sum <= 1e-18 || !sum.is_finite() {
        return Err(DescriptorError::DegenerateCovariance);
    }
    let e: Vec<Real> = eig.iter().map(|v| v.max(0.0) / sum).collect();
    let (e1, e2, e3) = (e[0], e[1], e[2]);

    let xlnx = |x: Real| if x > 0.0 { x * x.ln() } else { 0.0 };
    let features = [
        (e1 - e2) / e1,
        (e2 - e3) / e1,
        e3 / e1,
        (e1 * e2 * e3).cbrt(),
        (e1 - e3) / e1,
        -(xlnx(e1) + xlnx(e2) + xlnx(e3)),
        e3 / (e1 + e2 + e3),
    ];
    Ok(Descriptor {
        values: features.iter().map(|v| *v as f32).collect(),
        provider: ProviderKind::Eigen,
        scale: [1.0; 3],
        centroid: c,
        angle: 0.0,
        segment_id,
        observation,
        semantic: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn line_limits() {
        let pts: Vec<Point3> = (0..50).map(|i| Point3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let d = describe_eigen(&pts, 0, 0).unwrap();
        assert!((d.values[0] - 1.0).abs() < 1e-6, "linearity {}", d.values[0]);
        assert!(d.values[1].abs() < 1e-6, "planarity {}", d.values[1]);
        assert!(d.values[2].abs() < 1e-6, "scattering {}", d.values[2]);
    }

    #[test]
    fn plane_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..500)
            .map(|_| Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0))
            .collect();
        let d = describe_eigen(&pts, 0, 0).unwrap();
        assert!(d.values[1] > 0.6, "planarity {}", d.values[1]);
        assert!(d.values[2].abs() < 1e-6);
    }

    /// Independent closed-form symmetric 3x3 eigensolver (Cardano).
    fn cardano_eigenvalues(m: &[[f64; 3]; 3]) -> [f64; 3] {
        let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
        let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
        let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        if p < 1e-300 {
            return [q, q, q];
        }
        let mut b = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
            }
        }
        let detb = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (detb / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let l1 = q + 2.0 * p * phi.cos();
        let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let l2 = 3.0 * q - l1 - l3;
        [l1, l2, l3]
    }

    #[test]
    fn random_cloud_matches_independent_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let pts: Vec<Point3> = (0..400)
                .map(|_| {
                    Point3::new(
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * 2.0,
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * 1.0,
                        rng.sample::<f64, _>(rand_distr::StandardNormal) * 0.4,
                    )
                })
                .collect();
            let d = describe_eigen(&pts, 0, 0).unwrap();

            // Oracle path: covariance -> Cardano -> features.
            let c = crate::geom::centroid(&pts);
            let n = pts.len() as f64;
            let mut cov = [[0.0; 3]; 3];
            for p in &pts {
                let v = (*p - c).to_array();
                for i in 0..3 {
                    for j in 0..3 {
                        cov[i][j] += v[i] * v[j] / n;
                    }
                }
            }
            let mut eig = cardano_eigenvalues(&cov);
            eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let sum: f64 = eig.iter().sum();
            let e: Vec<f64> = eig.iter().map(|v| v / sum).collect();
            let xlnx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
            let want = [
                (e[0] - e[1]) / e[0],
                (e[1] - e[2]) / e[0],
                e[2] / e[0],
                (e[0] * e[1] * e[2]).cbrt(),
                (e[0] - e[2]) / e[0],
                -(xlnx(e[0]) + xlnx(e[1]) + xlnx(e[2])),
                e[2] / (e[0] + e[1] + e[2]),
            ];
            for (g, w) in d.values.iter().zip(want.iter()) {
                assert!((*g as f64 - w).abs() < 1e-6, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn invariant_to_rigid_motion_and_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Point3> = (0..300)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..2.0),
                )
            })
            .collect();
        let base = describe_eigen(&pts, 0, 0).unwrap();

        let t = crate::RigidTransform::se3_exp(&[0.3, -0.7, 1.2, 5.0, -2.0, 1.0]);
        let moved: Vec<Point3> = pts.iter().map(|p| t.apply(p)).collect();
        let d2 = describe_eigen(&moved, 0, 0).unwrap();
        for (a, b) in base.values.iter().zip(d2.values.iter()) {
            assert!((a - b).abs() < 1e-6, "rigid motion changed features");
        }

        let mut doubled = pts.clone();
        doubled.extend_from_slice(&pts);
        let d3 = describe_eigen(&doubled, 0, 0).unwrap();
        for (a, b) in base.values.iter().zip(d3.values.iter()) {
            assert!((a - b).abs() < 1e-9, "duplication changed features");
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pts = vec![Point3::new(1.0, 1.0, 1.0); 10];
        assert!(matches!(
            describe_eigen(&pts, 0, 0),
            Err(DescriptorError::DegenerateCovariance)
        ));
    }
}
