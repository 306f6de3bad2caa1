//! Gaussian primitive parameterization and covariance geometry.
//!
//! A primitive stores unconstrained parameters: log scales (exp gives the
//! per-axis standard deviations), a quaternion (normalized after every
//! optimizer step), and an opacity logit (sigmoid gives opacity). The world
//! covariance is `R S S^T R^T` with `S = diag(exp(log_scale))`.

use alloc::vec::Vec;

use crate::densify::DensifyStats;
use crate::math::{self, Mat3, Quat, Vec3};
use crate::optim::OptState;
use crate::{Error, Result};

/// One anisotropic 3D Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianPrimitive {
    pub mean: Vec3,
    pub log_scale: Vec3,
    pub rotation: Quat,
    pub opacity_logit: f64,
    /// RGB in [0, 1]; view-independent (degree-0) color.
    pub color: Vec3,
}

impl GaussianPrimitive {
    pub fn new(mean: Vec3, scale: Vec3, rotation: Quat, opacity: f64, color: Vec3) -> Self {
        GaussianPrimitive {
            mean,
            log_scale: scale.map(math::ln),
            rotation: rotation.normalized(),
            opacity_logit: math::logit(opacity),
            color,
        }
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    #[inline]
    pub fn scales(&self) -> Vec3 {
        self.log_scale.map(math::exp)
    }

    pub fn covariance(&self) -> Mat3 {
        build_covariance(self.log_scale, self.rotation)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite()
            && self.log_scale.is_finite()
            && self.rotation.is_finite()
            && self.opacity_logit.is_finite()
            && self.color.is_finite()
    }
}

/// `Sigma = R diag(exp(ls))^2 R^T`; symmetric positive definite by
/// construction for finite inputs.
pub fn build_covariance(log_scale: Vec3, rotation: Quat) -> Mat3 {
    let r = rotation.rotation_matrix();
    let s2 = log_scale.map(|v| math::exp(2.0 * v));
    // R * diag(s^2) * R^T
    let rd = r.scale_cols(s2);
    rd.mul_mat(&r.transpose())
}

/// Checked variant returning an error for non-finite inputs.
pub fn try_build_covariance(log_scale: Vec3, rotation: Quat) -> Result<Mat3> {
    if !log_scale.is_finite() || !rotation.is_finite() || rotation.norm() == 0.0 {
        return Err(Error::InvalidParameter("covariance inputs must be finite"));
    }
    Ok(build_covariance(log_scale, rotation))
}

/// Pulls `dL/dSigma` (full-matrix convention) back to the raw log-scale and
/// quaternion parameters.
pub fn covariance_backward(
    log_scale: Vec3,
    rotation: Quat,
    d_sigma: &Mat3,
) -> (Vec3, [f64; 4]) {
    let r = rotation.rotation_matrix();
    let s = log_scale.map(math::exp);
    let s2 = s.mul_elem(s);

    // Sigma = R D R^T with D = diag(s^2).
    // dL/dD = R^T G R (diagonal entries used); dL/ds_k = 2 s_k (R^T G R)_kk,
    // then d/d(log s_k) multiplies by s_k again.
    let rt_g_r = r.transpose().mul_mat(d_sigma).mul_mat(&r);
    let mut d_log_scale = Vec3::ZERO;
    for k in 0..3 {
        d_log_scale[k] = 2.0 * s2[k] * rt_g_r.0[k][k];
    }

    // dL/dR = (G + G^T) R D; G arrives symmetric from the render path but we
    // do not rely on it.
    let g_sym = d_sigma.add_mat(&d_sigma.transpose());
    let d_rot_mat = g_sym.mul_mat(&r).scale_cols(s2);
    let d_quat = rotation.rotation_matrix_backward(&d_rot_mat);

    (d_log_scale, d_quat)
}

/// Longest principal axis: rotated unit direction and semi-length (one
/// standard deviation). Ties pick the smallest axis index.
pub fn longest_axis(g: &GaussianPrimitive) -> (Vec3, f64) {
    let scales = g.scales();
    let k = scales.argmax();
    let r = g.rotation.rotation_matrix();
    (r.col(k), scales[k])
}

/// Unnormalized Gaussian density `exp(-1/2 (p-mu)^T Sigma^-1 (p-mu))`.
pub fn evaluate_density(g: &GaussianPrimitive, point: Vec3) -> Result<f64> {
    if !point.is_finite() {
        return Err(Error::InvalidParameter("density query point must be finite"));
    }
    // Work in the principal frame: y = R^T (p - mu), quadform = sum (y_k/s_k)^2.
    let r = g.rotation.rotation_matrix();
    let y = r.transpose().mul_vec(point - g.mean);
    let s = g.scales();
    if s.x <= 0.0 || s.y <= 0.0 || s.z <= 0.0 || !s.is_finite() {
        return Err(Error::SingularMatrix);
    }
    let q = (y.x / s.x) * (y.x / s.x) + (y.y / s.y) * (y.y / s.y) + (y.z / s.z) * (y.z / s.z);
    Ok(math::exp(-0.5 * q))
}

/// Scene container; the three arrays stay index-aligned through every
/// insert, remove, and densification operation.
#[derive(Clone, Debug, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub opt_state: Vec<OptState>,
    pub stats: Vec<DensifyStats>,
}

impl GaussianScene {
    pub fn new() -> Self {
        GaussianScene::default()
    }

    pub fn from_primitives(primitives: Vec<GaussianPrimitive>) -> Self {
        let n = primitives.len();
        GaussianScene {
            primitives,
            opt_state: alloc::vec![OptState::default(); n],
            stats: alloc::vec![DensifyStats::default(); n],
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn push(&mut self, g: GaussianPrimitive) {
        self.primitives.push(g);
        self.opt_state.push(OptState::default());
        self.stats.push(DensifyStats::default());
    }

    /// Keeps entries whose mask bit is set; all arrays compact in lockstep.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        debug_assert_eq!(keep.len(), self.len());
        let mut idx = 0;
        self.primitives.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
        idx = 0;
        self.opt_state.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
        idx = 0;
        self.stats.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
    }

    pub fn reset_stats(&mut self) {
        for s in &mut self.stats {
            *s = DensifyStats::default();
        }
    }

    #[inline]
    pub fn is_aligned(&self) -> bool {
        self.opt_state.len() == self.len() && self.stats.len() == self.len()
    }
}
