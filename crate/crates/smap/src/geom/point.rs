use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use crate::scalar::Scalar;

/// 3D point (or vector) in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn dist(&self, o: &Self) -> T {
        (*self - *o).norm()
    }

    pub fn dist_sq(&self, o: &Self) -> T {
        (*self - *o).norm_sq()
    }

    pub fn scaled(&self, k: T) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    /// Unit vector in the same direction; `None` when the norm underflows.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n <= T::zero() || !n.is_finite() {
            None
        } else {
            Some(self.scaled(T::one() / n))
        }
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    /// Lossy cast between scalar types.
    pub fn cast<U: Scalar>(&self) -> Point3<U> {
        Point3::new(
            U::from(self.x).unwrap(),
            U::from(self.y).unwrap(),
            U::from(self.z).unwrap(),
        )
    }
}

/// Arithmetic mean of a non-empty point set.
pub fn centroid<T: Scalar>(points: &[Point3<T>]) -> Point3<T> {
    assert!(!points.is_empty(), "centroid of empty point set");
    let mut sum = Point3::zero();
    for p in points {
        sum += *p;
    }
    sum.scaled(T::one() / T::from_usize(points.len()).unwrap())
}

impl<T: Scalar> Add for Point3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Point3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Neg for Point3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Scalar> AddAssign for Point3<T> {
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Scalar> SubAssign for Point3<T> {
    fn sub_assign(&mut self, o: Self) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl<T: Scalar> Mul<T> for Point3<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        self.scaled(k)
    }
}

impl<T: Scalar> Div<T> for Point3<T> {
    type Output = Self;
    fn div(self, k: T) -> Self {
        self.scaled(T::one() / k)
    }
}
