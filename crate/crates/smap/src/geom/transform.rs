use crate::scalar::{s, Scalar};

use super::Point3;

/// Rigid-body transform: orthonormal rotation (det +1) plus translation.
///
/// `rotation` is row-major; `apply` computes `R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: [[T; 3]; 3],
    pub translation: Point3<T>,
}

impl<T: Scalar> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> RigidTransform<T> {
    pub fn identity() -> Self {
        let z = T::zero();
        let o = T::one();
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: Point3::zero(),
        }
    }

    pub fn new(rotation: [[T; 3]; 3], translation: Point3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Point3<T>) -> Self {
        Self { translation: t, ..Self::identity() }
    }

    /// Rotation about the z axis by `yaw` radians, applied around the origin.
    pub fn from_yaw(yaw: T, translation: Point3<T>) -> Self {
        let (sn, cs) = yaw.sin_cos();
        let z = T::zero();
        let o = T::one();
        Self {
            rotation: [[cs, -sn, z], [sn, cs, z], [z, z, o]],
            translation,
        }
    }

    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + self.translation.x,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + self.translation.y,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + self.translation.z,
        )
    }

    pub fn rotate(&self, p: &Point3<T>) -> Point3<T> {
        let r = &self.rotation;
        Point3::new(
            r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z,
            r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z,
            r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z,
        )
    }

    /// Composition `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let a = &self.rotation;
        let b = &other.rotation;
        let mut r = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Self {
            rotation: r,
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> Self {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = self.translation;
        let inv = Self { rotation: rt, translation: Point3::zero() };
        let it = inv.rotate(&t);
        Self { rotation: rt, translation: -it }
    }

    /// Max deviation from orthonormality plus determinant error; 0 for a
    /// perfect rotation.
    pub fn rotation_defect(&self) -> T {
        let r = &self.rotation;
        let mut worst = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = T::zero();
                for k in 0..3 {
                    dot += r[i][k] * r[j][k];
                }
                let want = if i == j { T::one() } else { T::zero() };
                worst = worst.max((dot - want).abs());
            }
        }
        worst.max((self.det() - T::one()).abs())
    }

    pub fn is_valid(&self, tol: T) -> bool {
        self.translation.is_finite() && self.rotation_defect() <= tol
    }

    fn det(&self) -> T {
        let r = &self.rotation;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Rodrigues' formula: rotation matrix for the axis-angle vector `w`.
    pub fn so3_exp(w: Point3<T>) -> [[T; 3]; 3] {
        let theta = w.norm();
        let z = T::zero();
        let o = T::one();
        if theta < s(1e-12) {
            // First-order expansion keeps exp/log round trips stable near 0.
            return [[o, -w.z, w.y], [w.z, o, -w.x], [-w.y, w.x, o]];
        }
        let k = w.scaled(o / theta);
        let (sn, cs) = theta.sin_cos();
        let c1 = o - cs;
        let kx = [[z, -k.z, k.y], [k.z, z, -k.x], [-k.y, k.x, z]];
        let mut r = [[z; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut kx2 = z;
                for l in 0..3 {
                    kx2 += kx[i][l] * kx[l][j];
                }
                let eye = if i == j { o } else { z };
                r[i][j] = eye + sn * kx[i][j] + c1 * kx2;
            }
        }
        r
    }

    /// Axis-angle vector of a rotation matrix (inverse of [`Self::so3_exp`]).
    pub fn so3_log(r: &[[T; 3]; 3]) -> Point3<T> {
        let o = T::one();
        let two = s::<T>(2.0);
        let tr = r[0][0] + r[1][1] + r[2][2];
        let cos_theta = ((tr - o) / two).max(-o).min(o);
        let theta = cos_theta.acos();
        let axis2 = Point3::new(
            r[2][1] - r[1][2],
            r[0][2] - r[2][0],
            r[1][0] - r[0][1],
        );
        if theta < s(1e-7) {
            return axis2.scaled(o / two);
        }
        if theta > T::PI() - s(1e-5) {
            // Near pi the antisymmetric part vanishes; recover the axis from
            // the symmetric part R + I.
            let mut axis = Point3::new(
                (r[0][0] + o).max(T::zero()).sqrt(),
                (r[1][1] + o).max(T::zero()).sqrt(),
                (r[2][2] + o).max(T::zero()).sqrt(),
            )
            .scaled(o / two.sqrt());
            // Fix signs using off-diagonal terms, anchored on the largest axis
            // component.
            if axis.x >= axis.y && axis.x >= axis.z {
                if r[0][1] + r[1][0] < T::zero() {
                    axis.y = -axis.y;
                }
                if r[0][2] + r[2][0] < T::zero() {
                    axis.z = -axis.z;
                }
            } else if axis.y >= axis.z {
                if r[0][1] + r[1][0] < T::zero() {
                    axis.x = -axis.x;
                }
                if r[1][2] + r[2][1] < T::zero() {
                    axis.z = -axis.z;
                }
            } else {
                if r[0][2] + r[2][0] < T::zero() {
                    axis.x = -axis.x;
                }
                if r[1][2] + r[2][1] < T::zero() {
                    axis.y = -axis.y;
                }
            }
            if let Some(a) = axis.normalized() {
                return a.scaled(theta);
            }
        }
        axis2.scaled(theta / (two * theta.sin()))
    }

    /// Minimal 6-vector `[w, v]` with `exp` matching [`Self::se3_exp`].
    pub fn se3_log(&self) -> [T; 6] {
        let w = Self::so3_log(&self.rotation);
        let theta = w.norm();
        let o = T::one();
        // V^{-1} t with V the left Jacobian of SO(3).
        let v = if theta < s(1e-9) {
            self.translation
        } else {
            let k = w.scaled(o / theta);
            let t = self.translation;
            let half = s::<T>(0.5);
            let cot_term = (o - theta * (o + theta.cos()) / (s::<T>(2.0) * theta.sin()))
                / (theta * theta);
            let kxt = k.cross(&t);
            let kxkxt = k.cross(&kxt);
            t - kxt.scaled(half * theta) + kxkxt.scaled(cot_term * theta * theta)
        };
        [w.x, w.y, w.z, v.x, v.y, v.z]
    }

    /// Exponential map of a twist `[w, v]`.
    pub fn se3_exp(xi: &[T; 6]) -> Self {
        let w = Point3::new(xi[0], xi[1], xi[2]);
        let v = Point3::new(xi[3], xi[4], xi[5]);
        let theta = w.norm();
        let r = Self::so3_exp(w);
        let o = T::one();
        let t = if theta < s(1e-9) {
            v
        } else {
            let k = w.scaled(o / theta);
            let (sn, cs) = theta.sin_cos();
            let a = (o - cs) / theta;
            let b = (theta - sn) / theta;
            let kxv = k.cross(&v);
            let kxkxv = k.cross(&kxv);
            v + kxv.scaled(a) + kxkxv.scaled(b)
        };
        Self { rotation: r, translation: t }
    }

    /// Right-perturbed pose `self ∘ exp(xi)`; the local update used by the
    /// pose-graph solver.
    pub fn retract(&self, xi: &[T; 6]) -> Self {
        self.compose(&Self::se3_exp(xi))
    }

    /// Unit quaternion `(w, x, y, z)` of the rotation part.
    pub fn to_quaternion(&self) -> [T; 4] {
        let r = &self.rotation;
        let o = T::one();
        let quarter = s::<T>(0.25);
        let tr = r[0][0] + r[1][1] + r[2][2];
        if tr > T::zero() {
            let sq = (tr + o).sqrt() * s(2.0);
            [
                quarter * sq,
                (r[2][1] - r[1][2]) / sq,
                (r[0][2] - r[2][0]) / sq,
                (r[1][0] - r[0][1]) / sq,
            ]
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let sq = (o + r[0][0] - r[1][1] - r[2][2]).sqrt() * s(2.0);
            [
                (r[2][1] - r[1][2]) / sq,
                quarter * sq,
                (r[0][1] + r[1][0]) / sq,
                (r[0][2] + r[2][0]) / sq,
            ]
        } else if r[1][1] > r[2][2] {
            let sq = (o + r[1][1] - r[0][0] - r[2][2]).sqrt() * s(2.0);
            [
                (r[0][2] - r[2][0]) / sq,
                (r[0][1] + r[1][0]) / sq,
                quarter * sq,
                (r[1][2] + r[2][1]) / sq,
            ]
        } else {
            let sq = (o + r[2][2] - r[0][0] - r[1][1]).sqrt() * s(2.0);
            [
                (r[1][0] - r[0][1]) / sq,
                (r[0][2] + r[2][0]) / sq,
                (r[1][2] + r[2][1]) / sq,
                quarter * sq,
            ]
        }
    }

    /// Builds a transform from a unit quaternion `(w, x, y, z)`.
    pub fn from_quaternion(q: [T; 4], translation: Point3<T>) -> Self {
        let [w, x, y, z] = q;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        let (w, x, y, z) = (w / n, x / n, y / n, z / n);
        let two = s::<T>(2.0);
        let o = T::one();
        Self {
            rotation: [
                [
                    o - two * (y * y + z * z),
                    two * (x * y - z * w),
                    two * (x * z + y * w),
                ],
                [
                    two * (x * y + z * w),
                    o - two * (x * x + z * z),
                    two * (y * z - x * w),
                ],
                [
                    two * (x * z - y * w),
                    two * (y * z + x * w),
                    o - two * (x * x + y * y),
                ],
            ],
            translation,
        }
    }
}
