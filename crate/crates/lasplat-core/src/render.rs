//! Forward and backward rasterization of depth-sorted Gaussians.
//!
//! Forward, per pixel (front to back over the depth order):
//!
//! ```text
//! alpha_i = min(0.99, opacity_i * exp(-1/2 d^T conic d))
//! C      += color_i * alpha_i * T,   T *= 1 - alpha_i
//! ```
//!
//! skipping contributions with `alpha < alpha_skip` and stopping before any
//! contribution that would push `T` below `1e-4`. The backward pass re-walks
//! each pixel's contributor list front to back (recomputing the identical
//! alphas), then unwinds it with suffix sums to get exact gradients of the
//! loss w.r.t. every primitive parameter.
//!
//! Work is split by image row. Row partials are always merged in ascending
//! row order, so outputs are bit-identical whether rows are processed
//! serially or on any number of rayon workers.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::{self, ProjectedGaussian, ViewCamera};
use crate::imaging::{EdgeWeightMap, Image};
use crate::math::{self, Mat3, Sym2, Vec3};
use crate::model::{covariance_backward, GaussianPrimitive};
use crate::optim::ParamGrad;
use crate::{Error, Result};

pub const ALPHA_CLAMP: f64 = 0.99;
pub const ALPHA_SKIP_DEFAULT: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_STOP: f64 = 1e-4;
/// Footprints cover the 3-sigma ellipse of the projected covariance.
pub const FOOTPRINT_SIGMA: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RenderOptions {
    /// Contributions with alpha below this are skipped. Ground-truth
    /// rendering sets it to zero.
    pub alpha_skip: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { alpha_skip: ALPHA_SKIP_DEFAULT }
    }
}

/// Rendered image plus per-Gaussian statistics for one view.
#[derive(Clone, Debug)]
pub struct RenderBundle {
    pub image: Image,
    /// 2-norm of the per-pixel |d pixel-loss / d mean2d| sums (filled by
    /// [`backward`]).
    pub per_gaussian_abs_grad: Vec<f64>,
    /// 2-norm of the signed per-pixel sums (filled by [`backward`]).
    pub per_gaussian_grad: Vec<f64>,
    /// Edge-aware score: sum over pixels of edge weight times rendering
    /// weight `alpha_i * T_i`.
    pub per_gaussian_eas: Vec<f64>,
    /// Whether the Gaussian was composited into at least one pixel.
    pub per_gaussian_hit: Vec<bool>,
}

struct SplatEntry {
    mean2d: [f64; 2],
    conic: Sym2,
    opacity: f64,
    color: [f64; 3],
    x_min: u32,
    x_max: u32,
    /// Conservative quadratic-form cutoff implied by `alpha_skip`.
    quad_cutoff: f64,
    parent_index: u32,
}

struct SplatAux {
    cov2d: Sym2,
    /// Camera-space mean.
    t: Vec3,
    /// Camera-frame world covariance `W Sigma W^T`.
    sigma_cam: Mat3,
}

/// Projection, depth sort, and per-row binning for one (scene, view) pair.
/// Both [`render`] and [`backward`] consume this; the scene must not change
/// in between.
pub struct PreparedView {
    pub cam: ViewCamera,
    pub opts: RenderOptions,
    n_primitives: usize,
    entries: Vec<SplatEntry>,
    aux: Vec<SplatAux>,
    rows: Vec<Vec<u32>>,
}

pub fn prepare(
    prims: &[GaussianPrimitive],
    cam: &ViewCamera,
    opts: RenderOptions,
) -> PreparedView {
    let (w, h) = (cam.width, cam.height);
    let mut projected: Vec<(ProjectedGaussian, Mat3, Vec3)> = Vec::new();
    for (i, g) in prims.iter().enumerate() {
        if let Some(p) = camera::project(g, cam, i) {
            let sigma_cam = cam
                .rotation
                .mul_mat(&g.covariance())
                .mul_mat(&cam.rotation.transpose());
            let t = cam.world_to_camera(g.mean);
            projected.push((p, sigma_cam, t));
        }
    }
    // Front-to-back order; ties broken by primitive index.
    projected.sort_unstable_by(|a, b| {
        a.0.depth
            .partial_cmp(&b.0.depth)
            .unwrap()
            .then(a.0.parent_index.cmp(&b.0.parent_index))
    });

    let mut entries = Vec::with_capacity(projected.len());
    let mut aux = Vec::with_capacity(projected.len());
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); h];
    for (p, sigma_cam, t) in projected {
        let conic = match p.cov2d.inverse() {
            Some(c) => c,
            None => continue,
        };
        let rx = FOOTPRINT_SIGMA * math::sqrt(p.cov2d.a);
        let ry = FOOTPRINT_SIGMA * math::sqrt(p.cov2d.c);
        // Pixel (x, y) has center (x + 0.5, y + 0.5).
        let x_min = math::ceil(p.mean2d[0] - rx - 0.5).max(0.0);
        let x_max = math::floor(p.mean2d[0] + rx - 0.5).min(w as f64 - 1.0);
        let y_min = math::ceil(p.mean2d[1] - ry - 0.5).max(0.0);
        let y_max = math::floor(p.mean2d[1] + ry - 0.5).min(h as f64 - 1.0);
        if x_min > x_max || y_min > y_max {
            continue;
        }
        let g = &prims[p.parent_index];
        let opacity = g.opacity();
        let quad_cutoff = if opts.alpha_skip > 0.0 {
            // alpha < skip  <=>  quad > -2 ln(skip / opacity); +1 margin so
            // borderline pixels still take the exact alpha test.
            -2.0 * math::ln(opts.alpha_skip / opacity) + 1.0
        } else {
            f64::INFINITY
        };
        let idx = entries.len() as u32;
        entries.push(SplatEntry {
            mean2d: p.mean2d,
            conic,
            opacity,
            color: g.color.to_array(),
            x_min: x_min as u32,
            x_max: x_max as u32,
            quad_cutoff,
            parent_index: p.parent_index as u32,
        });
        aux.push(SplatAux { cov2d: p.cov2d, t, sigma_cam });
        for y in y_min as usize..=y_max as usize {
            rows[y].push(idx);
        }
    }

    PreparedView { cam: cam.clone(), opts, n_primitives: prims.len(), entries, aux, rows }
}

/// Runs `f` over all rows, serially or on the ambient rayon pool; outputs are
/// collected in row order either way.
fn map_rows<T: Send>(height: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if rayon::current_num_threads() > 1 {
            return (0..height).into_par_iter().map(f).collect();
        }
    }
    (0..height).map(f).collect()
}

struct RowForward {
    pixels: Vec<f64>,
    /// (row-list position, eas sum, hit) per touched entry.
    touched: Vec<(u32, f64, bool)>,
}

/// Forward rasterization; fills image, edge-aware scores, and hit flags.
/// Gradient fields stay zero until [`backward`].
pub fn render(prep: &PreparedView, edge_map: Option<&EdgeWeightMap>) -> RenderBundle {
    let (w, h) = (prep.cam.width, prep.cam.height);
    let alpha_skip = prep.opts.alpha_skip;

    let row_outputs = map_rows(h, |y| {
        let list = &prep.rows[y];
        let mut pixels = vec![0.0; w * 3];
        let mut eas = vec![0.0; list.len()];
        let mut hit = vec![false; list.len()];
        let py = y as f64 + 0.5;
        for x in 0..w {
            let px = x as f64 + 0.5;
            let mut t = 1.0;
            let mut rgb = [0.0f64; 3];
            for (pos, &ei) in list.iter().enumerate() {
                let e = &prep.entries[ei as usize];
                if (x as u32) < e.x_min || (x as u32) > e.x_max {
                    continue;
                }
                let dx = px - e.mean2d[0];
                let dy = py - e.mean2d[1];
                let quad = e.conic.quad(dx, dy);
                if quad > e.quad_cutoff {
                    continue;
                }
                let alpha = (e.opacity * math::exp(-0.5 * quad)).min(ALPHA_CLAMP);
                if alpha < alpha_skip {
                    continue;
                }
                let t_next = t * (1.0 - alpha);
                if t_next < TRANSMITTANCE_STOP {
                    break;
                }
                let weight = alpha * t;
                rgb[0] += e.color[0] * weight;
                rgb[1] += e.color[1] * weight;
                rgb[2] += e.color[2] * weight;
                hit[pos] = true;
                if let Some(em) = edge_map {
                    eas[pos] += em.weight(x, y) * weight;
                }
                t = t_next;
            }
            pixels[x * 3] = rgb[0];
            pixels[x * 3 + 1] = rgb[1];
            pixels[x * 3 + 2] = rgb[2];
        }
        let touched = list
            .iter()
            .enumerate()
            .filter(|(pos, _)| hit[*pos])
            .map(|(pos, &ei)| (ei, eas[pos], true))
            .collect();
        RowForward { pixels, touched }
    });

    let n = prep.n_primitives;
    let mut bundle = RenderBundle {
        image: Image::new(w, h),
        per_gaussian_abs_grad: vec![0.0; n],
        per_gaussian_grad: vec![0.0; n],
        per_gaussian_eas: vec![0.0; n],
        per_gaussian_hit: vec![false; n],
    };
    for (y, row) in row_outputs.into_iter().enumerate() {
        bundle.image.data[y * w * 3..(y + 1) * w * 3].copy_from_slice(&row.pixels);
        for (ei, eas, hit) in row.touched {
            let parent = prep.entries[ei as usize].parent_index as usize;
            bundle.per_gaussian_eas[parent] += eas;
            bundle.per_gaussian_hit[parent] |= hit;
        }
    }
    bundle
}

/// Convenience wrapper: prepare + forward in one call.
pub fn render_scene(
    prims: &[GaussianPrimitive],
    cam: &ViewCamera,
    edge_map: Option<&EdgeWeightMap>,
    opts: RenderOptions,
) -> RenderBundle {
    render(&prepare(prims, cam, opts), edge_map)
}

/// Gradients produced by the backward pass, aligned with the scene.
#[derive(Clone, Debug)]
pub struct BackwardResult {
    pub param_grads: Vec<ParamGrad>,
    /// Eq. 4-style signed view-space gradient norm per primitive (pixels).
    pub per_gaussian_grad: Vec<f64>,
    /// Absolute-value variant per primitive (pixels).
    pub per_gaussian_abs_grad: Vec<f64>,
}

#[derive(Clone, Copy, Default)]
struct EntryAccum {
    d_color: [f64; 3],
    /// dL/d(opacity) post-sigmoid.
    d_opacity: f64,
    d_mean2d: [f64; 2],
    abs_mean2d: [f64; 2],
    /// dL/d(conic) in (a, b, c) parameters (b counted once).
    d_conic: [f64; 3],
}

impl EntryAccum {
    fn add(&mut self, o: &EntryAccum) {
        for k in 0..3 {
            self.d_color[k] += o.d_color[k];
            self.d_conic[k] += o.d_conic[k];
        }
        self.d_opacity += o.d_opacity;
        for k in 0..2 {
            self.d_mean2d[k] += o.d_mean2d[k];
            self.abs_mean2d[k] += o.abs_mean2d[k];
        }
    }
}

#[derive(Clone, Copy)]
struct PixelContrib {
    pos: u32,
    alpha: f64,
    g_val: f64,
    t_before: f64,
    dx: f64,
    dy: f64,
    clamped: bool,
}

/// Analytic backward pass. `pixel_grads` is `dL/dC` per channel, row-major,
/// length `w * h * 3`; `prims` must be the exact slice passed to [`prepare`].
pub fn backward(
    prep: &PreparedView,
    prims: &[GaussianPrimitive],
    pixel_grads: &[f64],
) -> Result<BackwardResult> {
    let (w, h) = (prep.cam.width, prep.cam.height);
    if prims.len() != prep.n_primitives {
        return Err(Error::InvalidParameter("scene changed since prepare"));
    }
    if pixel_grads.len() != w * h * 3 {
        return Err(Error::ResolutionMismatch);
    }
    let alpha_skip = prep.opts.alpha_skip;

    let row_outputs = map_rows(h, |y| {
        let list = &prep.rows[y];
        let mut accum = vec![EntryAccum::default(); list.len()];
        let mut stack: Vec<PixelContrib> = Vec::with_capacity(64);
        let py = y as f64 + 0.5;
        for x in 0..w {
            let px = x as f64 + 0.5;
            let d_out = &pixel_grads[(y * w + x) * 3..(y * w + x) * 3 + 3];
            if d_out[0] == 0.0 && d_out[1] == 0.0 && d_out[2] == 0.0 {
                continue;
            }
            // Recompute the forward walk for this pixel.
            stack.clear();
            let mut t = 1.0;
            for (pos, &ei) in list.iter().enumerate() {
                let e = &prep.entries[ei as usize];
                if (x as u32) < e.x_min || (x as u32) > e.x_max {
                    continue;
                }
                let dx = px - e.mean2d[0];
                let dy = py - e.mean2d[1];
                let quad = e.conic.quad(dx, dy);
                if quad > e.quad_cutoff {
                    continue;
                }
                let g_val = math::exp(-0.5 * quad);
                let raw = e.opacity * g_val;
                let clamped = raw > ALPHA_CLAMP;
                let alpha = raw.min(ALPHA_CLAMP);
                if alpha < alpha_skip {
                    continue;
                }
                let t_next = t * (1.0 - alpha);
                if t_next < TRANSMITTANCE_STOP {
                    break;
                }
                stack.push(PixelContrib {
                    pos: pos as u32,
                    alpha,
                    g_val,
                    t_before: t,
                    dx,
                    dy,
                    clamped,
                });
                t = t_next;
            }
            // Unwind back to front with suffix sums of composited color.
            let mut suffix = [0.0f64; 3];
            for c in stack.iter().rev() {
                let e = &prep.entries[list[c.pos as usize] as usize];
                let a = &mut accum[c.pos as usize];
                let weight = c.alpha * c.t_before;
                let mut d_alpha = 0.0;
                for ch in 0..3 {
                    a.d_color[ch] += d_out[ch] * weight;
                    d_alpha +=
                        d_out[ch] * (e.color[ch] * c.t_before - suffix[ch] / (1.0 - c.alpha));
                    suffix[ch] += e.color[ch] * weight;
                }
                if c.clamped {
                    // min() clamp active: alpha is locally constant.
                    continue;
                }
                a.d_opacity += d_alpha * c.g_val;
                let d_power = d_alpha * e.opacity * c.g_val;
                a.d_conic[0] += d_power * (-0.5 * c.dx * c.dx);
                a.d_conic[1] += d_power * (-c.dx * c.dy);
                a.d_conic[2] += d_power * (-0.5 * c.dy * c.dy);
                // d(power)/d(mean2d) = +(conic * d); d = pixel - mean2d.
                let vx = d_power * (e.conic.a * c.dx + e.conic.b * c.dy);
                let vy = d_power * (e.conic.b * c.dx + e.conic.c * c.dy);
                a.d_mean2d[0] += vx;
                a.d_mean2d[1] += vy;
                a.abs_mean2d[0] += math::abs(vx);
                a.abs_mean2d[1] += math::abs(vy);
            }
        }
        accum
    });

    // Merge row partials in row order (deterministic regardless of workers).
    let mut totals = vec![EntryAccum::default(); prep.entries.len()];
    for (y, row_accum) in row_outputs.into_iter().enumerate() {
        for (pos, acc) in row_accum.into_iter().enumerate() {
            totals[prep.rows[y][pos] as usize].add(&acc);
        }
    }

    let n = prep.n_primitives;
    let mut out = BackwardResult {
        param_grads: vec![ParamGrad::default(); n],
        per_gaussian_grad: vec![0.0; n],
        per_gaussian_abs_grad: vec![0.0; n],
    };
    for (ei, acc) in totals.iter().enumerate() {
        let e = &prep.entries[ei];
        let aux = &prep.aux[ei];
        let parent = e.parent_index as usize;
        let grad = finalize_entry(e, aux, acc, &prep.cam, &prims[parent]);
        out.param_grads[parent].add_assign(&grad);
        out.per_gaussian_grad[parent] += math::hypot2(acc.d_mean2d[0], acc.d_mean2d[1]);
        out.per_gaussian_abs_grad[parent] += math::hypot2(acc.abs_mean2d[0], acc.abs_mean2d[1]);
    }
    Ok(out)
}

/// Chains the per-entry accumulators through conic inversion, the EWA
/// projection, and the covariance factorization to raw parameter gradients.
fn finalize_entry(
    e: &SplatEntry,
    aux: &SplatAux,
    acc: &EntryAccum,
    cam: &ViewCamera,
    prim: &GaussianPrimitive,
) -> ParamGrad {
    let mut grad = ParamGrad::default();
    grad.color = Vec3::from_array(acc.d_color);
    let o = e.opacity;
    grad.opacity_logit = acc.d_opacity * o * (1.0 - o);

    // Gradient w.r.t. the conic as a full 2x2 matrix (off-diagonals share).
    let gy = [
        [acc.d_conic[0], acc.d_conic[1] * 0.5],
        [acc.d_conic[1] * 0.5, acc.d_conic[2]],
    ];
    // Through the inverse: dL/dCov = -Y * GY * Y with Y = conic.
    let y = [[e.conic.a, e.conic.b], [e.conic.b, e.conic.c]];
    let mut ygy = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut s = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    s += y[r][k] * gy[k][l] * y[l][c];
                }
            }
            ygy[r][c] = -s;
        }
    }
    let gm2 = ygy; // symmetric

    // J and V at this entry.
    let t = aux.t;
    let j = camera::perspective_jacobian(cam, t);
    let v = &aux.sigma_cam;

    // GV = J^T GM2 J
    let mut gv = [[0.0; 3]; 3];
    for p in 0..3 {
        for q in 0..3 {
            let mut s = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    s += j[r][p] * gm2[r][c] * j[c][q];
                }
            }
            gv[p][q] = s;
        }
    }
    // GSigma = W^T GV W
    let wt = cam.rotation.transpose();
    let g_sigma = wt.mul_mat(&Mat3(gv)).mul_mat(&cam.rotation);
    let (d_log_scale, d_quat) = covariance_backward(prim.log_scale, prim.rotation, &g_sigma);
    grad.log_scale = d_log_scale;
    grad.rotation = d_quat;

    // GJ = 2 GM2 J V
    let mut jv = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += j[r][k] * v.0[k][c];
            }
            jv[r][c] = s;
        }
    }
    let mut gj = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            let mut s = 0.0;
            for k in 0..2 {
                s += 2.0 * gm2[r][k] * jv[k][c];
            }
            gj[r][c] = s;
        }
    }

    // Camera-space mean gradient: projection path plus J's dependence on t.
    let (du, dv_pix) = (acc.d_mean2d[0], acc.d_mean2d[1]);
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let mut dt = Vec3::new(
        du * cam.fx * inv_z,
        dv_pix * cam.fy * inv_z,
        -du * cam.fx * t.x * inv_z2 - dv_pix * cam.fy * t.y * inv_z2,
    );
    dt.x += gj[0][2] * (-cam.fx * inv_z2);
    dt.y += gj[1][2] * (-cam.fy * inv_z2);
    dt.z += gj[0][0] * (-cam.fx * inv_z2)
        + gj[1][1] * (-cam.fy * inv_z2)
        + gj[0][2] * (2.0 * cam.fx * t.x * inv_z3)
        + gj[1][2] * (2.0 * cam.fy * t.y * inv_z3);

    grad.mean = cam.rotation.transpose().mul_vec(dt);
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::loss_and_pixel_grads;
    use crate::math::{event_rng, uniform01, Quat};
    use approx::assert_relative_eq;

    fn test_camera(width: usize, height: usize) -> ViewCamera {
        ViewCamera {
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
            fx: width as f64,
            fy: width as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    /// Gaussian whose projected mean lands exactly on the center of pixel
    /// (w/2, h/2) for the test camera (cx maps onto pixel-center cx - 0.5,
    /// so offset the mean by half a pixel in x and y).
    fn centered_gaussian(cam: &ViewCamera, opacity: f64, color: [f64; 3], depth: f64) -> GaussianPrimitive {
        let x = 0.5 * depth / cam.fx;
        GaussianPrimitive::new(
            Vec3::new(x, x, depth),
            Vec3::splat(0.02 * depth),
            Quat::IDENTITY,
            opacity,
            Vec3::from_array(color),
        )
    }

    #[test]
    fn empty_scene_renders_black() {
        let cam = test_camera(8, 8);
        let bundle = render_scene(&[], &cam, None, RenderOptions::default());
        assert!(bundle.image.data.iter().all(|&v| v == 0.0));
        assert!(bundle.per_gaussian_hit.is_empty());
    }

    #[test]
    fn single_gaussian_center_pixel_value() {
        let cam = test_camera(8, 8);
        let g = centered_gaussian(&cam, 0.5, [1.0, 0.0, 0.0], 1.0);
        let bundle = render_scene(&[g], &cam, None, RenderOptions::default());
        // Pixel (4, 4) has center (4.5, 4.5) = projected mean; G = 1 there.
        let px = bundle.image.pixel(4, 4);
        assert!((px[0] - 0.5).abs() < 1e-12, "{px:?}");
        assert!((px[1] - 0.0).abs() < 1e-12);
        assert!((px[2] - 0.0).abs() < 1e-12);
        assert!(bundle.per_gaussian_hit[0]);
    }

    #[test]
    fn two_coincident_gaussians_composite() {
        let cam = test_camera(8, 8);
        let g1 = centered_gaussian(&cam, 0.5, [1.0, 0.0, 0.0], 1.0);
        let g2 = centered_gaussian(&cam, 0.8, [0.0, 1.0, 0.0], 1.000001);
        let bundle = render_scene(&[g1, g2], &cam, None, RenderOptions::default());
        let px = bundle.image.pixel(4, 4);
        // 0.5 * c1 + 0.8 * (1 - 0.5) * c2 per the blending formula; the depth
        // offset moves the second mean2d by ~5e-7 px, far below 1e-12 in G.
        assert!((px[0] - 0.5).abs() < 1e-12, "{px:?}");
        assert!((px[1] - 0.4).abs() < 1e-12, "{px:?}");
        assert!((px[2] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance_after_sort() {
        let cam = test_camera(16, 16);
        let mut rng = event_rng(40, 0, 0);
        let mut prims = Vec::new();
        for k in 0..12 {
            prims.push(GaussianPrimitive::new(
                Vec3::new(
                    (uniform01(&mut rng) - 0.5) * 0.2,
                    (uniform01(&mut rng) - 0.5) * 0.2,
                    1.0 + k as f64 * 0.07 + uniform01(&mut rng) * 0.01,
                ),
                Vec3::splat(0.02 + 0.03 * uniform01(&mut rng)),
                Quat::IDENTITY,
                0.3 + 0.5 * uniform01(&mut rng),
                Vec3::new(uniform01(&mut rng), uniform01(&mut rng), uniform01(&mut rng)),
            ));
        }
        let a = render_scene(&prims, &cam, None, RenderOptions::default());
        let mut permuted = prims.clone();
        permuted.reverse();
        permuted.swap(0, 5);
        let b = render_scene(&permuted, &cam, None, RenderOptions::default());
        assert_eq!(a.image.data, b.image.data);
    }

    #[test]
    fn rendered_values_stay_in_unit_range() {
        let cam = test_camera(12, 12);
        let mut rng = event_rng(41, 0, 0);
        let mut prims = Vec::new();
        for _ in 0..30 {
            prims.push(GaussianPrimitive::new(
                Vec3::new(
                    (uniform01(&mut rng) - 0.5) * 0.4,
                    (uniform01(&mut rng) - 0.5) * 0.4,
                    0.8 + uniform01(&mut rng),
                ),
                Vec3::splat(0.02 + 0.1 * uniform01(&mut rng)),
                Quat::IDENTITY,
                0.1 + 0.89 * uniform01(&mut rng),
                Vec3::new(uniform01(&mut rng), uniform01(&mut rng), uniform01(&mut rng)),
            ));
        }
        let bundle = render_scene(&prims, &cam, None, RenderOptions::default());
        assert!(bundle.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn eas_zero_for_zero_edge_map() {
        let cam = test_camera(8, 8);
        let g = centered_gaussian(&cam, 0.6, [1.0, 1.0, 1.0], 1.0);
        let edge = EdgeWeightMap { width: 8, height: 8, weights: vec![0.0; 64] };
        let bundle = render_scene(&[g], &cam, Some(&edge), RenderOptions::default());
        assert_eq!(bundle.per_gaussian_eas[0], 0.0);
        assert!(bundle.per_gaussian_hit[0]);
    }

    #[test]
    fn eas_accumulates_edge_weight_times_render_weight() {
        let cam = test_camera(8, 8);
        // Tiny footprint: only the center pixel contributes meaningfully.
        let mut g = centered_gaussian(&cam, 0.5, [1.0, 1.0, 1.0], 1.0);
        g.log_scale = Vec3::splat(math::ln(0.004));
        let mut weights = vec![0.0; 64];
        weights[4 * 8 + 4] = 2.0;
        let edge = EdgeWeightMap { width: 8, height: 8, weights };
        let bundle = render_scene(&[g], &cam, Some(&edge), RenderOptions::default());
        // rendering weight at the center pixel = alpha * T = 0.5 * 1.
        assert_relative_eq!(bundle.per_gaussian_eas[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_pixel_grads_give_zero_gradients() {
        let cam = test_camera(8, 8);
        let g = centered_gaussian(&cam, 0.5, [0.3, 0.9, 0.2], 1.0);
        let prims = [g];
        let prep = prepare(&prims, &cam, RenderOptions::default());
        let grads = backward(&prep, &prims, &vec![0.0; 8 * 8 * 3]).unwrap();
        assert_eq!(grads.param_grads[0].abs_max(), 0.0);
        assert_eq!(grads.per_gaussian_grad[0], 0.0);
    }

    #[test]
    fn backward_validates_inputs() {
        let cam = test_camera(8, 8);
        let g = centered_gaussian(&cam, 0.5, [1.0, 0.0, 0.0], 1.0);
        let prims = [g];
        let prep = prepare(&prims, &cam, RenderOptions::default());
        assert!(backward(&prep, &[], &vec![0.0; 8 * 8 * 3]).is_err());
        assert!(backward(&prep, &prims, &vec![0.0; 7]).is_err());
    }

    fn random_scene(seed: u64, count: usize) -> Vec<GaussianPrimitive> {
        let mut rng = event_rng(seed, 0, 0);
        let mut prims = Vec::new();
        for _ in 0..count {
            let axis = Vec3::new(
                uniform01(&mut rng) - 0.5,
                uniform01(&mut rng) - 0.5,
                uniform01(&mut rng) - 0.5,
            );
            prims.push(GaussianPrimitive::new(
                Vec3::new(
                    (uniform01(&mut rng) - 0.5) * 0.25,
                    (uniform01(&mut rng) - 0.5) * 0.25,
                    0.9 + 0.4 * uniform01(&mut rng),
                ),
                Vec3::new(
                    0.02 + 0.05 * uniform01(&mut rng),
                    0.02 + 0.05 * uniform01(&mut rng),
                    0.02 + 0.05 * uniform01(&mut rng),
                ),
                Quat::from_axis_angle(axis, uniform01(&mut rng) * 3.0),
                0.25 + 0.6 * uniform01(&mut rng),
                Vec3::new(uniform01(&mut rng), uniform01(&mut rng), uniform01(&mut rng)),
            ));
        }
        prims
    }

    fn random_gt(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = event_rng(seed, 1, 0);
        let mut img = Image::new(w, h);
        for v in &mut img.data {
            *v = uniform01(&mut rng);
        }
        img
    }

    /// Central-difference oracle over every raw parameter of a scene.
    fn fd_param_grads(
        prims: &[GaussianPrimitive],
        cam: &ViewCamera,
        gt: &Image,
        lambda: f64,
        eps: f64,
    ) -> Vec<ParamGrad> {
        let loss_of = |ps: &[GaussianPrimitive]| -> f64 {
            let bundle = render_scene(ps, cam, None, RenderOptions::default());
            loss_and_pixel_grads(&bundle.image, gt, lambda).unwrap().0
        };
        let mut out = vec![ParamGrad::default(); prims.len()];
        let mut work = prims.to_vec();
        for i in 0..prims.len() {
            for p in 0..14 {
                let read = |g: &GaussianPrimitive, p: usize| -> f64 {
                    match p {
                        0..=2 => g.mean[p],
                        3..=5 => g.log_scale[p - 3],
                        6..=9 => g.rotation.to_array()[p - 6],
                        10 => g.opacity_logit,
                        _ => g.color[p - 11],
                    }
                };
                let write = |g: &mut GaussianPrimitive, p: usize, v: f64| match p {
                    0..=2 => g.mean[p] = v,
                    3..=5 => g.log_scale[p - 3] = v,
                    6..=9 => {
                        let mut q = g.rotation.to_array();
                        q[p - 6] = v;
                        g.rotation = Quat::from_array(q);
                    }
                    10 => g.opacity_logit = v,
                    _ => g.color[p - 11] = v,
                };
                let orig = read(&work[i], p);
                write(&mut work[i], p, orig + eps);
                let lp = loss_of(&work);
                write(&mut work[i], p, orig - eps);
                let lm = loss_of(&work);
                write(&mut work[i], p, orig);
                let fd = (lp - lm) / (2.0 * eps);
                match p {
                    0..=2 => out[i].mean[p] = fd,
                    3..=5 => out[i].log_scale[p - 3] = fd,
                    6..=9 => out[i].rotation[p - 6] = fd,
                    10 => out[i].opacity_logit = fd,
                    _ => out[i].color[p - 11] = fd,
                }
            }
        }
        out
    }

    fn compare_grads(analytic: &[ParamGrad], numeric: &[ParamGrad]) -> f64 {
        let mut worst = 0.0f64;
        let mut check = |a: f64, n: f64| {
            // Relative error with an absolute floor for near-zero components.
            if n.abs() < 1e-8 && a.abs() < 1e-8 {
                return;
            }
            worst = worst.max((a - n).abs() / n.abs().max(1e-8));
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

    #[test]
    fn single_gaussian_gradients_match_finite_differences() {
        let cam = test_camera(16, 16);
        let prims = random_scene(50, 1);
        let gt = random_gt(51, 16, 16);
        let prep = prepare(&prims, &cam, RenderOptions::default());
        let bundle = render(&prep, None);
        let (_, pixel_grads) = loss_and_pixel_grads(&bundle.image, &gt, 0.0).unwrap();
        let analytic = backward(&prep, &prims, &pixel_grads).unwrap();
        let numeric = fd_param_grads(&prims, &cam, &gt, 0.0, 1e-4);
        let worst = compare_grads(&analytic.param_grads, &numeric);
        assert!(worst < 1e-3, "max rel err {worst}");
    }

    #[test]
    fn multi_gaussian_gradients_match_finite_differences() {
        for (seed, lambda) in [(60u64, 0.0), (61, 0.2)] {
            let cam = test_camera(16, 16);
            let prims = random_scene(seed, 8);
            let gt = random_gt(seed + 100, 16, 16);
            let prep = prepare(&prims, &cam, RenderOptions::default());
            let bundle = render(&prep, None);
            let (_, pixel_grads) = loss_and_pixel_grads(&bundle.image, &gt, lambda).unwrap();
            let analytic = backward(&prep, &prims, &pixel_grads).unwrap();
            let numeric = fd_param_grads(&prims, &cam, &gt, lambda, 1e-4);
            let worst = compare_grads(&analytic.param_grads, &numeric);
            assert!(worst < 1e-3, "seed {seed}: max rel err {worst}");
        }
    }

    #[test]
    fn abs_grad_dominates_signed_grad() {
        let cam = test_camera(16, 16);
        let prims = random_scene(70, 10);
        let gt = random_gt(71, 16, 16);
        let prep = prepare(&prims, &cam, RenderOptions::default());
        let bundle = render(&prep, None);
        let (_, pixel_grads) = loss_and_pixel_grads(&bundle.image, &gt, 0.2).unwrap();
        let g = backward(&prep, &prims, &pixel_grads).unwrap();
        for i in 0..prims.len() {
            assert!(
                g.per_gaussian_abs_grad[i] >= g.per_gaussian_grad[i] - 1e-12,
                "{} < {}",
                g.per_gaussian_abs_grad[i],
                g.per_gaussian_grad[i]
            );
        }
    }

    #[test]
    fn gradient_conflict_shows_in_abs_grad() {
        // One wide Gaussian spans a step edge in the target: pixel gradients
        // on the two sides pull its mean in opposite directions, so the
        // signed sum nearly cancels while the absolute sum does not.
        let cam = test_camera(16, 16);
        let wide = GaussianPrimitive::new(
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.25, 0.08, 0.01),
            Quat::IDENTITY,
            0.9,
            Vec3::splat(0.5),
        );
        let mut gt = Image::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                let v = if x >= 8 { 1.0 } else { 0.0 };
                gt.set_pixel(x, y, [v, v, v]);
            }
        }
        let prims = [wide];
        let prep = prepare(&prims, &cam, RenderOptions::default());
        let bundle = render(&prep, None);
        let (_, pixel_grads) = loss_and_pixel_grads(&bundle.image, &gt, 0.0).unwrap();
        let g = backward(&prep, &prims, &pixel_grads).unwrap();
        assert!(
            g.per_gaussian_abs_grad[0] > 5.0 * g.per_gaussian_grad[0],
            "abs {} signed {}",
            g.per_gaussian_abs_grad[0],
            g.per_gaussian_grad[0]
        );
    }

    #[test]
    fn transmittance_is_monotone_per_pixel() {
        // Indirectly: a fully opaque front Gaussian blocks everything behind.
        let cam = test_camera(8, 8);
        let front = centered_gaussian(&cam, 0.98, [1.0, 0.0, 0.0], 1.0);
        let back = centered_gaussian(&cam, 0.98, [0.0, 1.0, 0.0], 2.0);
        let bundle = render_scene(&[back, front], &cam, None, RenderOptions::default());
        let px = bundle.image.pixel(4, 4);
        assert!(px[0] > 0.9);
        assert!(px[1] < 0.05);
    }
}
