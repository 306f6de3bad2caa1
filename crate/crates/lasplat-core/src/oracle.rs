//! Independent brute-force verifiers: Monte Carlo shape differences for the
//! long-axis split geometry, a grid search locating the optimal minor-axis
//! factor, and finite-difference gradient checking for the rasterizer.
//!
//! "Shape" is the 1-sigma ellipsoid solid `{x : (x-mu)^T Sigma^-1 (x-mu) <= 1}`.
//! Two estimators are provided: the full 3D symmetric difference between the
//! parent solid and the union of the two children, and a 2D cross-section
//! through the split plane that compares the parent ellipse against a single
//! child ellipse (the two children are congruent by symmetry). The 2D mode is
//! the one whose minimizer coincides with the tangent construction
//! `R_s = R_0 sqrt(1 - d^2/L0^2)` across the full d range; the union variant
//! agrees near d = 0.45 but its optimum drifts for small d because the
//! sibling covers part of the gap.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::camera::ViewCamera;
use crate::densify::{long_axis_split_with, MinorScale};
use crate::imaging::{loss_and_pixel_grads, Image};
use crate::math::{self, event_rng, rng_tag, uniform01, Mat3, Quat, Vec3};
use crate::model::GaussianPrimitive;
use crate::optim::ParamGrad;
use crate::render::{render_scene, RenderOptions};
use crate::Result;

/// Monte Carlo volume estimates for one parent/children configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ShapeDiffReport {
    pub mc_samples: usize,
    /// Estimated parent solid volume (or area, in 2D mode).
    pub parent_volume_estimate: f64,
    /// Estimated symmetric-difference volume (or area).
    pub symmetric_difference_estimate: f64,
    /// Binomial standard error of the symmetric-difference estimate.
    pub standard_error: f64,
}

struct EllipsoidTest {
    rot_t: Mat3,
    mean: Vec3,
    inv_scales: Vec3,
}

impl EllipsoidTest {
    fn new(g: &GaussianPrimitive) -> EllipsoidTest {
        let s = g.scales();
        EllipsoidTest {
            rot_t: g.rotation.rotation_matrix().transpose(),
            mean: g.mean,
            inv_scales: Vec3::new(1.0 / s.x, 1.0 / s.y, 1.0 / s.z),
        }
    }

    #[inline]
    fn contains(&self, p: Vec3) -> bool {
        let y = self.rot_t.mul_vec(p - self.mean).mul_elem(self.inv_scales);
        y.dot(y) <= 1.0
    }

    /// World-space axis-aligned bounds of the 1-sigma solid.
    fn aabb(&self, g: &GaussianPrimitive) -> (Vec3, Vec3) {
        let cov = g.covariance();
        let half = Vec3::new(
            math::sqrt(cov.0[0][0]),
            math::sqrt(cov.0[1][1]),
            math::sqrt(cov.0[2][2]),
        );
        (g.mean - half, g.mean + half)
    }
}

/// Estimates the volume of the symmetric difference between the parent's
/// 1-sigma ellipsoid and the union of the two children's, by uniform
/// sampling in a common bounding box.
pub fn mc_shape_difference(
    parent: &GaussianPrimitive,
    children: (&GaussianPrimitive, &GaussianPrimitive),
    samples: usize,
    seed: u64,
) -> ShapeDiffReport {
    let tp = EllipsoidTest::new(parent);
    let ta = EllipsoidTest::new(children.0);
    let tb = EllipsoidTest::new(children.1);

    let (mut lo, mut hi) = tp.aabb(parent);
    for (t, g) in [(&ta, children.0), (&tb, children.1)] {
        let (l, h) = t.aabb(g);
        lo = Vec3::new(lo.x.min(l.x), lo.y.min(l.y), lo.z.min(l.z));
        hi = Vec3::new(hi.x.max(h.x), hi.y.max(h.y), hi.z.max(h.z));
    }
    let span = hi - lo;
    let box_vol = span.x * span.y * span.z;

    let mut rng = event_rng(seed, rng_tag::ORACLE, 0);
    let mut diff_hits = 0usize;
    let mut parent_hits = 0usize;
    for _ in 0..samples {
        let p = Vec3::new(
            lo.x + span.x * uniform01(&mut rng),
            lo.y + span.y * uniform01(&mut rng),
            lo.z + span.z * uniform01(&mut rng),
        );
        let in_parent = tp.contains(p);
        let in_union = ta.contains(p) || tb.contains(p);
        if in_parent != in_union {
            diff_hits += 1;
        }
        if in_parent {
            parent_hits += 1;
        }
    }
    let p_hat = diff_hits as f64 / samples as f64;
    ShapeDiffReport {
        mc_samples: samples,
        parent_volume_estimate: box_vol * parent_hits as f64 / samples as f64,
        symmetric_difference_estimate: box_vol * p_hat,
        standard_error: box_vol * math::sqrt(p_hat * (1.0 - p_hat) / samples as f64),
    }
}

/// Which geometry the shape-difference estimator works in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DiffMode {
    /// Parent solid vs union of both children, full 3D volume.
    Volume3d,
    /// Cross-section through the long axis and the wider minor axis:
    /// parent ellipse vs one child ellipse.
    CrossSection2d,
}

/// Axis indices (long, chosen minor) for the cross-section plane.
fn section_axes(parent: &GaussianPrimitive) -> (usize, usize) {
    let s = parent.scales();
    let long = s.argmax();
    let mut minor = usize::MAX;
    for k in 0..3 {
        if k == long {
            continue;
        }
        if minor == usize::MAX || s[k] > s[minor] {
            minor = k;
        }
    }
    (long, minor)
}

/// 2D cross-section estimator. In the plane spanned by the parent's long
/// axis (x) and chosen minor axis (y), the parent is the ellipse
/// `(L0, R0)` at the origin and the child is `(L0 - d, rs)` at `(d, 0)`.
fn mc_section_difference(
    l0: f64,
    r0: f64,
    d: f64,
    child_long: f64,
    child_minor: f64,
    bound_minor: f64,
    samples: usize,
    seed: u64,
    counter: u64,
) -> ShapeDiffReport {
    let x_max = l0.max(d + child_long) * 1.001;
    let y_max = r0.max(bound_minor) * 1.001;
    let area = (2.0 * x_max) * (2.0 * y_max);
    let mut rng = event_rng(seed, rng_tag::ORACLE, counter);
    let mut diff_hits = 0usize;
    let mut parent_hits = 0usize;
    for _ in 0..samples {
        let x = (uniform01(&mut rng) * 2.0 - 1.0) * x_max;
        let y = (uniform01(&mut rng) * 2.0 - 1.0) * y_max;
        let in_parent = (x / l0) * (x / l0) + (y / r0) * (y / r0) <= 1.0;
        let cx = (x - d) / child_long;
        let cy = y / child_minor;
        let in_child = cx * cx + cy * cy <= 1.0;
        if in_parent != in_child {
            diff_hits += 1;
        }
        if in_parent {
            parent_hits += 1;
        }
    }
    let p_hat = diff_hits as f64 / samples as f64;
    ShapeDiffReport {
        mc_samples: samples,
        parent_volume_estimate: area * parent_hits as f64 / samples as f64,
        symmetric_difference_estimate: area * p_hat,
        standard_error: area * math::sqrt(p_hat * (1.0 - p_hat) / samples as f64),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RsSample {
    pub multiplier: f64,
    pub difference: f64,
    pub standard_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RsSearch {
    pub best_multiplier: f64,
    pub curve: Vec<RsSample>,
}

/// Sweeps child minor-axis scales `R_s = multiplier * R_0` at fixed split
/// distance `d = d_fraction * L0` and returns the multiplier minimizing the
/// estimated shape difference. Common random numbers (same seed stream and
/// same bounding region for every grid point) keep the curve smooth.
pub fn grid_search_rs(
    parent: &GaussianPrimitive,
    d_fraction: f64,
    grid: &[f64],
    samples: usize,
    seed: u64,
    mode: DiffMode,
) -> RsSearch {
    assert!(!grid.is_empty());
    let s = parent.scales();
    let (long_axis, minor_axis) = section_axes(parent);
    let l0 = s[long_axis];
    let d = d_fraction * l0;
    let child_long = l0 - d;

    let mut curve = Vec::with_capacity(grid.len());
    let grid_max = grid.iter().cloned().fold(f64::MIN, f64::max);

    match mode {
        DiffMode::CrossSection2d => {
            let r0 = s[minor_axis];
            let bound_minor = r0 * grid_max.max(1.0);
            for &m in grid {
                let rep = mc_section_difference(
                    l0,
                    r0,
                    d,
                    child_long,
                    m * r0,
                    bound_minor,
                    samples,
                    seed,
                    0, // same stream for every multiplier
                );
                curve.push(RsSample {
                    multiplier: m,
                    difference: rep.symmetric_difference_estimate,
                    standard_error: rep.standard_error,
                });
            }
        }
        DiffMode::Volume3d => {
            for &m in grid {
                let (a, b) = split_with_absolute_minor(parent, d_fraction, m);
                // Identical seed stream per grid point; the bounding box is
                // held fixed by evaluating at the largest multiplier's box.
                let (big_a, big_b) = split_with_absolute_minor(parent, d_fraction, grid_max);
                let rep = mc_volume_difference_common_box(
                    parent,
                    (&a, &b),
                    (&big_a, &big_b),
                    samples,
                    seed,
                );
                curve.push(RsSample {
                    multiplier: m,
                    difference: rep.symmetric_difference_estimate,
                    standard_error: rep.standard_error,
                });
            }
        }
    }

    let mut best = 0usize;
    for (k, smp) in curve.iter().enumerate() {
        if smp.difference < curve[best].difference {
            best = k;
        }
    }
    RsSearch { best_multiplier: curve[best].multiplier, curve }
}

/// Children with minor scales set to `multiplier * R_0` outright (the grid
/// search must not route through the tangent formula it is checking).
fn split_with_absolute_minor(
    parent: &GaussianPrimitive,
    d_fraction: f64,
    multiplier: f64,
) -> (GaussianPrimitive, GaussianPrimitive) {
    long_axis_split_with(parent, d_fraction, 1.0, MinorScale::Absolute(multiplier))
        .expect("valid split parameters")
}

fn mc_volume_difference_common_box(
    parent: &GaussianPrimitive,
    children: (&GaussianPrimitive, &GaussianPrimitive),
    box_children: (&GaussianPrimitive, &GaussianPrimitive),
    samples: usize,
    seed: u64,
) -> ShapeDiffReport {
    let tp = EllipsoidTest::new(parent);
    let ta = EllipsoidTest::new(children.0);
    let tb = EllipsoidTest::new(children.1);

    let (mut lo, mut hi) = tp.aabb(parent);
    for (g, t) in [
        (box_children.0, EllipsoidTest::new(box_children.0)),
        (box_children.1, EllipsoidTest::new(box_children.1)),
    ] {
        let (l, h) = t.aabb(g);
        lo = Vec3::new(lo.x.min(l.x), lo.y.min(l.y), lo.z.min(l.z));
        hi = Vec3::new(hi.x.max(h.x), hi.y.max(h.y), hi.z.max(h.z));
    }
    let span = hi - lo;
    let box_vol = span.x * span.y * span.z;

    let mut rng = event_rng(seed, rng_tag::ORACLE, 0);
    let mut diff_hits = 0usize;
    let mut parent_hits = 0usize;
    for _ in 0..samples {
        let p = Vec3::new(
            lo.x + span.x * uniform01(&mut rng),
            lo.y + span.y * uniform01(&mut rng),
            lo.z + span.z * uniform01(&mut rng),
        );
        let in_parent = tp.contains(p);
        let in_union = ta.contains(p) || tb.contains(p);
        if in_parent != in_union {
            diff_hits += 1;
        }
        if in_parent {
            parent_hits += 1;
        }
    }
    let p_hat = diff_hits as f64 / samples as f64;
    ShapeDiffReport {
        mc_samples: samples,
        parent_volume_estimate: box_vol * parent_hits as f64 / samples as f64,
        symmetric_difference_estimate: box_vol * p_hat,
        standard_error: box_vol * math::sqrt(p_hat * (1.0 - p_hat) / samples as f64),
    }
}

/// Central finite differences of the full render-plus-loss pipeline over
/// every raw parameter. Intended for small scenes and low resolutions.
pub fn finite_diff_gradients(
    prims: &[GaussianPrimitive],
    cam: &ViewCamera,
    gt: &Image,
    lambda: f64,
    eps: f64,
    opts: RenderOptions,
) -> Result<Vec<ParamGrad>> {
    let loss_of = |ps: &[GaussianPrimitive]| -> Result<f64> {
        let bundle = render_scene(ps, cam, None, opts);
        Ok(loss_and_pixel_grads(&bundle.image, gt, lambda)?.0)
    };
    let mut out = Vec::with_capacity(prims.len());
    let mut work = prims.to_vec();
    for i in 0..prims.len() {
        let mut grad = ParamGrad::default();
        for p in 0..14 {
            let orig = read_param(&work[i], p);
            write_param(&mut work[i], p, orig + eps);
            let lp = loss_of(&work)?;
            write_param(&mut work[i], p, orig - eps);
            let lm = loss_of(&work)?;
            write_param(&mut work[i], p, orig);
            write_grad(&mut grad, p, (lp - lm) / (2.0 * eps));
        }
        out.push(grad);
    }
    Ok(out)
}

fn read_param(g: &GaussianPrimitive, p: usize) -> f64 {
    match p {
        0..=2 => g.mean[p],
        3..=5 => g.log_scale[p - 3],
        6..=9 => g.rotation.to_array()[p - 6],
        10 => g.opacity_logit,
        _ => g.color[p - 11],
    }
}

fn write_param(g: &mut GaussianPrimitive, p: usize, v: f64) {
    match p {
        0..=2 => g.mean[p] = v,
        3..=5 => g.log_scale[p - 3] = v,
        6..=9 => {
            let mut q = g.rotation.to_array();
            q[p - 6] = v;
            g.rotation = Quat::from_array(q);
        }
        10 => g.opacity_logit = v,
        _ => g.color[p - 11] = v,
    }
}

fn write_grad(grad: &mut ParamGrad, p: usize, v: f64) {
    match p {
        0..=2 => grad.mean[p] = v,
        3..=5 => grad.log_scale[p - 3] = v,
        6..=9 => grad.rotation[p - 6] = v,
        10 => grad.opacity_logit = v,
        _ => grad.color[p - 11] = v,
    }
}

/// Worst relative disagreement between two gradient sets, with an absolute
/// floor below which components count as matching.
pub fn max_relative_gradient_error(
    analytic: &[ParamGrad],
    numeric: &[ParamGrad],
    abs_floor: f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut check = |a: f64, n: f64| {
        if a.abs() < abs_floor && n.abs() < abs_floor {
            return;
        }
        worst = worst.max((a - n).abs() / n.abs().max(abs_floor));
    };
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        for k in 0..3 {
            check(a.mean[k], n.mean[k]);
            check(a.log_scale[k], n.log_scale[k]);
            check(a.color[k], n.color[k]);
        }
        for k in 0..4 {
            check(a.rotation[k], n.rotation[k]);
        }
        check(a.opacity_logit, n.opacity_logit);
    }
    worst
}

/// Reference tangent factor `sqrt(1 - d_fraction^2)`.
pub fn tangent_minor_factor(d_fraction: f64) -> f64 {
    math::sqrt(1.0 - d_fraction * d_fraction)
}

/// Random primitive for geometry checks: anisotropic scales, arbitrary
/// rotation and position.
pub fn random_primitive(rng: &mut ChaCha8Rng) -> GaussianPrimitive {
    let axis = Vec3::new(
        uniform01(rng) - 0.5,
        uniform01(rng) - 0.5,
        uniform01(rng) - 0.5,
    );
    GaussianPrimitive::new(
        Vec3::new(
            uniform01(rng) * 2.0 - 1.0,
            uniform01(rng) * 2.0 - 1.0,
            uniform01(rng) * 2.0 - 1.0,
        ),
        Vec3::new(
            0.2 + 1.3 * uniform01(rng),
            0.2 + 1.3 * uniform01(rng),
            0.2 + 1.3 * uniform01(rng),
        ),
        Quat::from_axis_angle(axis, uniform01(rng) * core::f64::consts::PI),
        0.3 + 0.6 * uniform01(rng),
        Vec3::splat(0.5),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densify::long_axis_split;
    use crate::math::event_rng;

    fn parent(seed: u64) -> GaussianPrimitive {
        let mut rng = event_rng(seed, rng_tag::ORACLE, 7);
        random_primitive(&mut rng)
    }

    #[test]
    fn identical_children_give_zero_difference() {
        let g = parent(1);
        let rep = mc_shape_difference(&g, (&g, &g), 20_000, 5);
        assert_eq!(rep.symmetric_difference_estimate, 0.0);
        assert!(rep.parent_volume_estimate > 0.0);
    }

    #[test]
    fn point_children_give_parent_volume() {
        let g = parent(2);
        let mut dot = g;
        dot.log_scale = Vec3::splat(math::ln(1e-6));
        let rep = mc_shape_difference(&g, (&dot, &dot), 400_000, 6);
        let s = g.scales();
        let expect = 4.0 / 3.0 * core::f64::consts::PI * s.x * s.y * s.z;
        assert!(
            (rep.symmetric_difference_estimate - expect).abs() <= 3.0 * rep.standard_error,
            "estimate {} expected {} (3se {})",
            rep.symmetric_difference_estimate,
            expect,
            3.0 * rep.standard_error
        );
    }

    #[test]
    fn volume_difference_matches_voxel_grid() {
        // Independent second estimator: regular voxel centers in the same box.
        let g = parent(3);
        let (a, b) = long_axis_split(&g, 0.45, 0.6).unwrap();
        let rep = mc_shape_difference(&g, (&a, &b), 600_000, 11);

        let tp = EllipsoidTest::new(&g);
        let ta = EllipsoidTest::new(&a);
        let tb = EllipsoidTest::new(&b);
        let (mut lo, mut hi) = tp.aabb(&g);
        for (t, gg) in [(&ta, &a), (&tb, &b)] {
            let (l, h) = t.aabb(gg);
            lo = Vec3::new(lo.x.min(l.x), lo.y.min(l.y), lo.z.min(l.z));
            hi = Vec3::new(hi.x.max(h.x), hi.y.max(h.y), hi.z.max(h.z));
        }
        let span = hi - lo;
        let n = 256usize;
        let cell = Vec3::new(span.x / n as f64, span.y / n as f64, span.z / n as f64);
        let cell_vol = cell.x * cell.y * cell.z;
        let mut count = 0usize;
        for iz in 0..n {
            let z = lo.z + (iz as f64 + 0.5) * cell.z;
            for iy in 0..n {
                let y = lo.y + (iy as f64 + 0.5) * cell.y;
                for ix in 0..n {
                    let p = Vec3::new(lo.x + (ix as f64 + 0.5) * cell.x, y, z);
                    let in_parent = tp.contains(p);
                    let in_union = ta.contains(p) || tb.contains(p);
                    if in_parent != in_union {
                        count += 1;
                    }
                }
            }
        }
        let voxel = count as f64 * cell_vol;
        assert!(
            (rep.symmetric_difference_estimate - voxel).abs() <= 3.0 * rep.standard_error,
            "mc {} voxel {} (3se {})",
            rep.symmetric_difference_estimate,
            voxel,
            3.0 * rep.standard_error
        );
    }

    #[test]
    fn standard_error_scales_with_samples() {
        let g = parent(4);
        let (a, b) = long_axis_split(&g, 0.45, 0.6).unwrap();
        let r1 = mc_shape_difference(&g, (&a, &b), 100_000, 13);
        let r2 = mc_shape_difference(&g, (&a, &b), 200_000, 13);
        let ratio = r1.standard_error / r2.standard_error;
        assert!((ratio - core::f64::consts::SQRT_2).abs() < 0.14, "ratio {ratio}");
        // Same seed, same sample count: deterministic.
        let r1b = mc_shape_difference(&g, (&a, &b), 100_000, 13);
        assert_eq!(r1.symmetric_difference_estimate, r1b.symmetric_difference_estimate);
    }

    fn grid_02() -> Vec<f64> {
        let mut g = Vec::new();
        let mut m = 0.5;
        while m <= 1.1 + 1e-9 {
            g.push(m);
            m += 0.02;
        }
        g
    }

    #[test]
    fn cross_section_optimum_matches_tangent_factor() {
        // The 2D cross-section argmin should land within one grid step of
        // sqrt(1 - d^2/L0^2) for both reference split distances.
        for (seed, d_fraction) in [(10u64, 0.45), (11, 0.2), (12, 0.45), (13, 0.2)] {
            let g = parent(seed);
            let search =
                grid_search_rs(&g, d_fraction, &grid_02(), 400_000, seed, DiffMode::CrossSection2d);
            let expect = tangent_minor_factor(d_fraction);
            assert!(
                (search.best_multiplier - expect).abs() <= 0.02 + 1e-9,
                "d {} best {} expected {}",
                d_fraction,
                search.best_multiplier,
                expect
            );
        }
    }

    #[test]
    fn small_d_optimum_approaches_one() {
        let g = parent(14);
        let search = grid_search_rs(&g, 0.02, &grid_02(), 300_000, 3, DiffMode::CrossSection2d);
        assert!(
            (search.best_multiplier - 1.0).abs() <= 0.02 + 1e-9,
            "best {}",
            search.best_multiplier
        );
    }

    #[test]
    fn curve_is_unimodal_up_to_noise() {
        let g = parent(15);
        let search = grid_search_rs(&g, 0.45, &grid_02(), 400_000, 9, DiffMode::CrossSection2d);
        // Count significant slope sign changes (|delta| > 3 sigma of the
        // difference of two correlated estimates; bound by sum of ses).
        let mut last_sign = 0i32;
        let mut changes = 0;
        for w in search.curve.windows(2) {
            let delta = w[1].difference - w[0].difference;
            let noise = 3.0 * (w[0].standard_error + w[1].standard_error);
            if delta.abs() <= noise {
                continue;
            }
            let sign = if delta > 0.0 { 1 } else { -1 };
            if last_sign != 0 && sign != last_sign {
                changes += 1;
            }
            last_sign = sign;
        }
        assert!(changes <= 1, "{changes} significant slope sign changes");
    }

    #[test]
    fn volume_mode_agrees_near_reference_distance() {
        // At d = 0.45 L0 even the 3D union variant has its optimum within a
        // step of the tangent value.
        let g = parent(16);
        let search = grid_search_rs(&g, 0.45, &grid_02(), 300_000, 21, DiffMode::Volume3d);
        let expect = tangent_minor_factor(0.45);
        assert!(
            (search.best_multiplier - expect).abs() <= 0.04 + 1e-9,
            "best {} expected {}",
            search.best_multiplier,
            expect
        );
    }

    #[test]
    fn fd_harness_zero_loss_and_eps_behaviour() {
        use crate::camera::ViewCamera;
        use crate::math::Mat3;
        let cam = ViewCamera {
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
            fx: 16.0,
            fy: 16.0,
            cx: 8.0,
            cy: 8.0,
            width: 16,
            height: 16,
        };
        let mut rng = event_rng(17, rng_tag::ORACLE, 0);
        let mut g = random_primitive(&mut rng);
        g.mean = Vec3::new(0.0, 0.0, 1.2);
        g.log_scale = Vec3::splat(math::ln(0.08));
        let prims = [g];
        let opts = RenderOptions::default();

        // Zero-loss configuration: gt equals the render.
        let gt = render_scene(&prims, &cam, None, opts).image;
        let eps = 1e-4;
        let grads = finite_diff_gradients(&prims, &cam, &gt, 0.0, eps, opts).unwrap();
        assert!(grads[0].abs_max() < 10.0 * eps, "{}", grads[0].abs_max());

        // Halving eps shrinks the analytic-vs-numeric gap on a smooth config.
        let mut gt2 = gt.clone();
        for v in &mut gt2.data {
            *v = (*v + 0.13).min(1.0);
        }
        let prep = crate::render::prepare(&prims, &cam, opts);
        let bundle = crate::render::render(&prep, None);
        let (_, pg) = loss_and_pixel_grads(&bundle.image, &gt2, 1.0).unwrap();
        let analytic = crate::render::backward(&prep, &prims, &pg).unwrap();
        let coarse = finite_diff_gradients(&prims, &cam, &gt2, 1.0, 1e-3, opts).unwrap();
        let fine = finite_diff_gradients(&prims, &cam, &gt2, 1.0, 1e-4, opts).unwrap();
        let err_coarse = max_relative_gradient_error(&analytic.param_grads, &coarse, 1e-8);
        let err_fine = max_relative_gradient_error(&analytic.param_grads, &fine, 1e-8);
        assert!(
            err_fine <= err_coarse + 1e-9,
            "fine {err_fine} vs coarse {err_coarse}"
        );
    }
}
