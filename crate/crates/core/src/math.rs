//! Small 3D vector math, triangle primitives, and summation helpers.

use serde::{Deserialize, Serialize};

use crate::scalar::{rl, Real};

/// A 3D point or vector in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec3<S> {
    pub x: S,
    pub y: S,
    pub z: S,
}

/// Points and vectors share one representation; the alias marks intent.
pub type Point3<S> = Vec3<S>;

impl<S: Real> Vec3<S> {
    #[inline]
    pub fn new(x: S, y: S, z: S) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(S::zero(), S::zero(), S::zero())
    }

    #[inline]
    pub fn splat(v: S) -> Self {
        Self::new(v, v, v)
    }

    #[inline]
    pub fn from_f64(p: Vec3<f64>) -> Self {
        Self::new(rl(p.x), rl(p.y), rl(p.z))
    }

    #[inline]
    pub fn to_f64(self) -> Vec3<f64> {
        Vec3::new(self.x.to_f64(), self.y.to_f64(), self.z.to_f64())
    }

    #[inline]
    pub fn dot(self, o: Self) -> S {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> S {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> S {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist(self, o: Self) -> S {
        (self - o).norm()
    }

    #[inline]
    pub fn dist_sq(self, o: Self) -> S {
        (self - o).norm_sq()
    }

    /// Unit vector, or zero when the norm is at or below `eps`.
    #[inline]
    pub fn normalized_or_zero(self, eps: S) -> Self {
        let n = self.norm();
        if n <= eps {
            Self::zero()
        } else {
            self / n
        }
    }

    #[inline]
    pub fn scale(self, s: S) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    #[inline]
    pub fn min_by_component(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn max_by_component(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn component(self, axis: usize) -> S {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl<S: Real> std::ops::Add for Vec3<S> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<S: Real> std::ops::Sub for Vec3<S> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<S: Real> std::ops::Mul<S> for Vec3<S> {
    type Output = Self;
    #[inline]
    fn mul(self, s: S) -> Self {
        self.scale(s)
    }
}

impl<S: Real> std::ops::Div<S> for Vec3<S> {
    type Output = Self;
    #[inline]
    fn div(self, s: S) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<S: Real> std::ops::Neg for Vec3<S> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 rotation matrix.
#[derive(Debug, Clone, Copy)]
pub struct Mat3<S> {
    pub rows: [[S; 3]; 3],
}

impl<S: Real> Mat3<S> {
    pub fn identity() -> Self {
        let o = S::one();
        let z = S::zero();
        Self {
            rows: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Rotation from a unit quaternion (w, x, y, z).
    pub fn from_quaternion(w: S, x: S, y: S, z: S) -> Self {
        let two = rl::<S>(2.0);
        let o = S::one();
        Self {
            rows: [
                [
                    o - two * (y * y + z * z),
                    two * (x * y - w * z),
                    two * (x * z + w * y),
                ],
                [
                    two * (x * y + w * z),
                    o - two * (x * x + z * z),
                    two * (y * z - w * x),
                ],
                [
                    two * (x * z - w * y),
                    two * (y * z + w * x),
                    o - two * (x * x + y * y),
                ],
            ],
        }
    }

    /// Rotation of `angle` radians about a unit `axis` (Rodrigues).
    pub fn from_axis_angle(axis: Vec3<S>, angle: S) -> Self {
        let c = angle.cos();
        let s = angle.sin();
        let t = S::one() - c;
        let (x, y, z) = (axis.x, axis.y, axis.z);
        Self {
            rows: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    #[inline]
    pub fn apply(&self, v: Vec3<S>) -> Vec3<S> {
        Vec3::new(
            self.rows[0][0] * v.x + self.rows[0][1] * v.y + self.rows[0][2] * v.z,
            self.rows[1][0] * v.x + self.rows[1][1] * v.y + self.rows[1][2] * v.z,
            self.rows[2][0] * v.x + self.rows[2][1] * v.y + self.rows[2][2] * v.z,
        )
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let mut rows = [[S::zero(); 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                let mut acc = S::zero();
                for k in 0..3 {
                    acc += self.rows[i][k] * o.rows[k][j];
                }
                *cell = acc;
            }
        }
        Self { rows }
    }
}

/// Closest point on triangle (a, b, c) to `p` (Ericson, Real-Time Collision
/// Detection §5.1.5). Returns the point and its barycentric coordinates.
pub fn closest_point_on_triangle<S: Real>(
    p: Vec3<S>,
    a: Vec3<S>,
    b: Vec3<S>,
    c: Vec3<S>,
) -> (Vec3<S>, [S; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= S::zero() && d2 <= S::zero() {
        return (a, [S::one(), S::zero(), S::zero()]);
    }

    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= S::zero() && d4 <= d3 {
        return (b, [S::zero(), S::one(), S::zero()]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= S::zero() && d1 >= S::zero() && d3 <= S::zero() {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [S::one() - v, v, S::zero()]);
    }

    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= S::zero() && d5 <= d6 {
        return (c, [S::zero(), S::zero(), S::one()]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= S::zero() && d2 >= S::zero() && d6 <= S::zero() {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [S::one() - w, S::zero(), w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= S::zero() && (d4 - d3) >= S::zero() && (d5 - d6) >= S::zero() {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [S::zero(), S::one() - w, w]);
    }

    let denom = S::one() / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [S::one() - v - w, v, w])
}

/// Ray/triangle intersection (Moller-Trumbore). Returns `(t, u, v)` for hits
/// with `t > t_min`; `u`, `v` are barycentric coordinates of the hit.
pub fn ray_triangle_intersect<S: Real>(
    origin: Vec3<S>,
    dir: Vec3<S>,
    a: Vec3<S>,
    b: Vec3<S>,
    c: Vec3<S>,
    t_min: S,
) -> Option<(S, S, S)> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(e2);
    let det = e1.dot(pvec);
    if det.abs() < rl(1e-14) {
        return None;
    }
    let inv_det = S::one() / det;
    let tvec = origin - a;
    let u = tvec.dot(pvec) * inv_det;
    if u < S::zero() || u > S::one() {
        return None;
    }
    let qvec = tvec.cross(e1);
    let v = dir.dot(qvec) * inv_det;
    if v < S::zero() || u + v > S::one() {
        return None;
    }
    let t = e2.dot(qvec) * inv_det;
    if t > t_min {
        Some((t, u, v))
    } else {
        None
    }
}

/// Neumaier compensated accumulator; order-insensitive to ~1 ulp even over
/// millions of terms.
#[derive(Debug, Clone, Copy)]
pub struct CompensatedSum<S> {
    sum: S,
    comp: S,
}

impl<S: Real> Default for CompensatedSum<S> {
    fn default() -> Self {
        Self {
            sum: S::zero(),
            comp: S::zero(),
        }
    }
}

impl<S: Real> CompensatedSum<S> {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: S) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> S {
        self.sum + self.comp
    }
}

/// Compensated sum of a 3-vector stream.
#[derive(Debug, Clone, Copy)]
pub struct CompensatedSum3<S> {
    x: CompensatedSum<S>,
    y: CompensatedSum<S>,
    z: CompensatedSum<S>,
}

impl<S: Real> Default for CompensatedSum3<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> CompensatedSum3<S> {
    pub fn new() -> Self {
        Self {
            x: CompensatedSum::new(),
            y: CompensatedSum::new(),
            z: CompensatedSum::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, v: Vec3<S>) {
        self.x.add(v.x);
        self.y.add(v.y);
        self.z.add(v.z);
    }

    #[inline]
    pub fn value(&self) -> Vec3<S> {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }
}
