//! Pinhole cameras and perspective projection of Gaussians.

use crate::math::{self, Mat3, Sym2, Vec3};
use crate::model::GaussianPrimitive;
use crate::{Error, Result};

/// Gaussians closer than this camera-space depth are culled.
pub const NEAR_CLIP: f64 = 0.01;
/// Added to the projected covariance diagonal (pixels^2) so every splat
/// covers at least a fraction of a pixel.
pub const COV2D_DILATION: f64 = 0.3;

/// Pinhole camera: `p_cam = R p_world + t`, pixel `u = fx x/z + cx`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ViewCamera {
    /// World-to-camera rotation (orthonormal).
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl ViewCamera {
    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose().mul_vec(self.translation))
    }

    /// Builds a camera at `pos` looking toward `target`.
    pub fn look_at(
        pos: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
    ) -> Result<ViewCamera> {
        let forward = target - pos;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidParameter("camera position equals target"));
        }
        let z = forward.normalized();
        let x = z.cross(up);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidParameter("camera forward parallel to up"));
        }
        let x = x.normalized();
        let y = z.cross(x);
        let rotation = Mat3::from_rows(x, y, z);
        let translation = -(rotation.mul_vec(pos));
        Ok(ViewCamera {
            rotation,
            translation,
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidParameter("focal lengths must be positive"));
        }
        let rtr = self.rotation.transpose().mul_mat(&self.rotation);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if math::abs(rtr.0[i][j] - expect) > 1e-9 {
                    return Err(Error::InvalidParameter("camera rotation not orthonormal"));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.mul_vec(p) + self.translation
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Pixel coordinates of the projected mean.
    pub mean2d: [f64; 2],
    /// Projected covariance (pixels^2), diagonal-dilated; positive definite.
    pub cov2d: Sym2,
    /// Camera-space depth.
    pub depth: f64,
    /// Index of the source primitive in its scene.
    pub parent_index: usize,
}

/// EWA-style projection: perspective Jacobian at the mean, camera-frame
/// covariance, upper-left 2x2 block, diagonal dilation. Returns `None` when
/// the mean lies behind the near plane.
pub fn project(
    g: &GaussianPrimitive,
    cam: &ViewCamera,
    parent_index: usize,
) -> Option<ProjectedGaussian> {
    let t = cam.world_to_camera(g.mean);
    if t.z <= NEAR_CLIP {
        return None;
    }
    let inv_z = 1.0 / t.z;
    let mean2d = [cam.fx * t.x * inv_z + cam.cx, cam.fy * t.y * inv_z + cam.cy];

    // J = d(pixel)/d(camera point), 2x3, evaluated at the mean.
    let j = perspective_jacobian(cam, t);
    let sigma_cam = cam
        .rotation
        .mul_mat(&g.covariance())
        .mul_mat(&cam.rotation.transpose());

    // cov2d = J Sigma_cam J^T
    let mut jv = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += j[r][k] * sigma_cam.0[k][c];
            }
            jv[r][c] = s;
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut s = 0.0;
            for k in 0..3 {
                s += jv[r][k] * j[c][k];
            }
            cov[r][c] = s;
        }
    }

    let cov2d = Sym2 {
        a: cov[0][0] + COV2D_DILATION,
        b: 0.5 * (cov[0][1] + cov[1][0]),
        c: cov[1][1] + COV2D_DILATION,
    };

    Some(ProjectedGaussian { mean2d, cov2d, depth: t.z, parent_index })
}

/// 2x3 Jacobian of the pinhole map at camera-space point `t`.
#[inline]
pub(crate) fn perspective_jacobian(cam: &ViewCamera, t: Vec3) -> [[f64; 3]; 2] {
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    [
        [cam.fx * inv_z, 0.0, -cam.fx * t.x * inv_z2],
        [0.0, cam.fy * inv_z, -cam.fy * t.y * inv_z2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Quat;
    use approx::assert_relative_eq;

    fn axis_camera(fx: f64, width: usize, height: usize) -> ViewCamera {
        // Identity pose: camera at origin looking down +z.
        ViewCamera {
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    fn tiny_gaussian(mean: Vec3) -> GaussianPrimitive {
        GaussianPrimitive::new(mean, Vec3::splat(0.01), Quat::IDENTITY, 0.5, Vec3::splat(0.5))
    }

    #[test]
    fn on_axis_projection_hits_principal_point() {
        let cam = axis_camera(100.0, 64, 64);
        let p = project(&tiny_gaussian(Vec3::new(0.0, 0.0, 1.0)), &cam, 0).unwrap();
        assert_relative_eq!(p.mean2d[0], cam.cx, epsilon = 1e-12);
        assert_relative_eq!(p.mean2d[1], cam.cy, epsilon = 1e-12);
        assert_relative_eq!(p.depth, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn offset_projection_pinhole_arithmetic() {
        let cam = axis_camera(100.0, 64, 64);
        let p = project(&tiny_gaussian(Vec3::new(0.1, 0.0, 1.0)), &cam, 0).unwrap();
        assert_relative_eq!(p.mean2d[0], cam.cx + 10.0, epsilon = 1e-12);
        assert_relative_eq!(p.mean2d[1], cam.cy, epsilon = 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = axis_camera(100.0, 64, 64);
        assert!(project(&tiny_gaussian(Vec3::new(0.0, 0.0, -1.0)), &cam, 0).is_none());
        assert!(project(&tiny_gaussian(Vec3::new(0.0, 0.0, 0.005)), &cam, 0).is_none());
    }

    #[test]
    fn cov2d_is_positive_definite_after_dilation() {
        let cam = axis_camera(80.0, 32, 32);
        let g = GaussianPrimitive::new(
            Vec3::new(0.2, -0.1, 2.0),
            Vec3::new(0.3, 0.05, 0.001),
            Quat::from_axis_angle(Vec3::new(1.0, 2.0, 0.5), 0.8),
            0.7,
            Vec3::splat(0.5),
        );
        let p = project(&g, &cam, 3).unwrap();
        assert!(p.cov2d.is_positive_definite());
        assert_eq!(p.parent_index, 3);
    }

    #[test]
    fn look_at_is_orthonormal_and_centered() {
        let pos = Vec3::new(3.0, -2.0, 1.5);
        let cam = ViewCamera::look_at(
            pos,
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
            90.0,
            90.0,
            64,
            48,
        )
        .unwrap();
        cam.validate().unwrap();
        let c = cam.center();
        assert_relative_eq!(c.x, pos.x, epsilon = 1e-12);
        assert_relative_eq!(c.y, pos.y, epsilon = 1e-12);
        assert_relative_eq!(c.z, pos.z, epsilon = 1e-12);
        // The target should project onto the optical axis.
        let t = cam.world_to_camera(Vec3::ZERO);
        assert_relative_eq!(t.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(t.y, 0.0, epsilon = 1e-12);
        assert!(t.z > 0.0);
    }

    #[test]
    fn look_at_rejects_degenerate_up() {
        let r = ViewCamera::look_at(
            Vec3::new(0.0, 0.0, 5.0),
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
            90.0,
            90.0,
            64,
            64,
        );
        assert!(r.is_err());
    }
}
