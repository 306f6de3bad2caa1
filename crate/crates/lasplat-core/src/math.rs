//! Small fixed-size linear algebra and scalar helpers.
//!
//! Hand-rolled on purpose: the backward passes in [`crate::render`] and
//! [`crate::model`] differentiate through every one of these operations, so
//! keeping them explicit keeps the adjoints auditable.

use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub};

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

/// Scalar math routed through `std` when available and `libm` otherwise, so
/// the crate builds without the standard library.
pub mod num {
    macro_rules! shim {
        ($name:ident, $libm:ident) => {
            #[inline(always)]
            pub fn $name(x: f64) -> f64 {
                #[cfg(feature = "std")]
                {
                    x.$name()
                }
                #[cfg(not(feature = "std"))]
                {
                    libm::$libm(x)
                }
            }
        };
    }

    shim!(exp, exp);
    shim!(ln, log);
    shim!(log10, log10);
    shim!(sqrt, sqrt);
    shim!(sin, sin);
    shim!(cos, cos);
    shim!(floor, floor);
    shim!(ceil, ceil);
    shim!(round, round);

    #[inline(always)]
    pub fn abs(x: f64) -> f64 {
        #[cfg(feature = "std")]
        {
            x.abs()
        }
        #[cfg(not(feature = "std"))]
        {
            libm::fabs(x)
        }
    }

    #[inline(always)]
    pub fn powf(x: f64, y: f64) -> f64 {
        #[cfg(feature = "std")]
        {
            x.powf(y)
        }
        #[cfg(not(feature = "std"))]
        {
            libm::pow(x, y)
        }
    }

    #[inline(always)]
    pub fn hypot2(x: f64, y: f64) -> f64 {
        sqrt(x * x + y * y)
    }
}

pub use num::{abs, ceil, cos, exp, floor, hypot2, ln, log10, powf, round, sin, sqrt};

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Inverse sigmoid; `p` must lie strictly inside (0, 1).
#[inline]
pub fn logit(p: f64) -> f64 {
    ln(p / (1.0 - p))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub const fn splat(v: f64) -> Self {
        Vec3 { x: v, y: v, z: v }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> f64 {
        sqrt(self.dot(self))
    }

    #[inline]
    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    #[inline]
    pub fn map(self, f: impl Fn(f64) -> f64) -> Vec3 {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }

    #[inline]
    pub fn mul_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Index of the largest component; first index wins ties.
    #[inline]
    pub fn argmax(self) -> usize {
        let a = self.to_array();
        let mut best = 0;
        for k in 1..3 {
            if a[k] > a[best] {
                best = k;
            }
        }
        best
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index out of range"),
        }
    }
}

impl IndexMut<usize> for Vec3 {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    #[inline]
    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Mat3 {
        Mat3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.0[i])
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    #[inline]
    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += self.0[i][k] * o.0[k][j];
                }
                out[i][j] = s;
            }
        }
        Mat3(out)
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn scale_cols(&self, s: Vec3) -> Mat3 {
        let mut out = self.0;
        for i in 0..3 {
            out[i][0] *= s.x;
            out[i][1] *= s.y;
            out[i][2] *= s.z;
        }
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse via the adjugate; returns `None` when the determinant is not
    /// finite and nonzero.
    pub fn inverse(&self) -> Option<Mat3> {
        let m = &self.0;
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv_det = 1.0 / det;
        let mut out = [[0.0; 3]; 3];
        out[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
        out[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        out[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        out[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
        out[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        out[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        out[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
        out[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        out[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        Some(Mat3(out))
    }

    pub fn add_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = self.0;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += o.0[i][j];
            }
        }
        Mat3(out)
    }

    pub fn scaled(&self, s: f64) -> Mat3 {
        let mut out = self.0;
        for row in &mut out {
            for v in row {
                *v *= s;
            }
        }
        Mat3(out)
    }
}

/// Symmetric 2x2 matrix `[[a, b], [b, c]]`, used for projected covariances
/// and their inverses (conics).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    #[inline]
    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    #[inline]
    pub fn inverse(&self) -> Option<Sym2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = 1.0 / det;
        Some(Sym2 { a: self.c * inv, b: -self.b * inv, c: self.a * inv })
    }

    /// Quadratic form `[x, y] * M * [x, y]^T`.
    #[inline]
    pub fn quad(&self, x: f64, y: f64) -> f64 {
        self.a * x * x + 2.0 * self.b * x * y + self.c * y * y
    }

    pub fn is_positive_definite(&self) -> bool {
        self.a > 0.0 && self.det() > 0.0
    }
}

/// Quaternion stored as `(w, x, y, z)`. Primitive rotations keep this
/// normalized, but all routines accept arbitrary nonzero quaternions and
/// normalize internally so gradients can flow through the raw parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    #[inline]
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Quat {
        Quat { w, x, y, z }
    }

    /// Rotation of `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quat {
        let u = axis.normalized();
        let (s, c) = (sin(angle * 0.5), cos(angle * 0.5));
        Quat::new(c, u.x * s, u.y * s, u.z * s)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)
    }

    #[inline]
    pub fn normalized(self) -> Quat {
        let inv = 1.0 / self.norm();
        Quat::new(self.w * inv, self.x * inv, self.y * inv, self.z * inv)
    }

    #[inline]
    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [f64; 4]) -> Quat {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn rotation_matrix(self) -> Mat3 {
        let q = self.normalized();
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        Mat3([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }

    /// Pulls a gradient w.r.t. the rotation matrix back to the raw (possibly
    /// unnormalized) quaternion components, including the normalization step.
    pub fn rotation_matrix_backward(self, d_rot: &Mat3) -> [f64; 4] {
        let n = self.norm();
        let q = self.normalized();
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        let g = &d_rot.0;

        // dR/d(qn) for the normalized components, entry by entry.
        let dw = 2.0
            * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0]
                + x * g[2][1]);
        let dx = 2.0
            * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2]
                + z * g[2][0]
                + w * g[2][1]
                - 2.0 * x * g[2][2]);
        let dy = 2.0
            * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2]
                - w * g[2][0]
                + z * g[2][1]
                - 2.0 * y * g[2][2]);
        let dz = 2.0
            * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
                + y * g[1][2]
                + x * g[2][0]
                + y * g[2][1]);

        // Through normalization: d/dq = (I - qn qn^T) / |q| applied to d/d(qn).
        let gq = [dw, dx, dy, dz];
        let qn = [w, x, y, z];
        let dot: f64 = gq.iter().zip(qn.iter()).map(|(a, b)| a * b).sum();
        let mut out = [0.0; 4];
        for k in 0..4 {
            out[k] = (gq[k] - qn[k] * dot) / n;
        }
        out
    }
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

// ---------------------------------------------------------------------------
// Seeded randomness.
//
// Every random decision in the crate draws from a ChaCha stream derived from
// (seed, domain tag, counter), so resuming a run at any iteration reproduces
// all later draws without serializing generator state.
// ---------------------------------------------------------------------------

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for one (seed, tag, counter) event.
pub fn event_rng(seed: u64, tag: u64, counter: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    let mixed = splitmix64(splitmix64(seed ^ tag.wrapping_mul(0xa076_1d64_78bd_642f)) ^ counter);
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Domain tags for [`event_rng`] streams.
pub mod rng_tag {
    pub const EPOCH_SHUFFLE: u64 = 1;
    pub const DENSIFY_SELECT: u64 = 2;
    pub const EAS_VIEWS: u64 = 3;
    pub const BASELINE_SPLIT: u64 = 4;
    pub const SCENE_GEN: u64 = 5;
    pub const SCENE_INIT: u64 = 6;
    pub const ORACLE: u64 = 7;
}

/// Uniform draw in `[0, 1)` with 53-bit resolution.
#[inline]
pub fn uniform01(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform integer in `[0, n)` by rejection, bias-free.
pub fn uniform_index(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - u64::MAX % n;
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = uniform_index(rng, i + 1);
        items.swap(i, j);
    }
}

/// Standard normal sample via Box-Muller.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let mut u1 = uniform01(rng);
    while u1 <= 0.0 {
        u1 = uniform01(rng);
    }
    let u2 = uniform01(rng);
    sqrt(-2.0 * ln(u1)) * cos(2.0 * core::f64::consts::PI * u2)
}
