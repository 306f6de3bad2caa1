//! Image buffers, edge-weight maps, reconstruction loss, and quality metrics.
//!
//! Everything here is pure: images are row-major RGB in [0, 1] and all
//! operations are safe to call concurrently on shared read-only data.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{self};
use crate::{Error, Result};

/// Row-major RGB image, each channel in [0, 1].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Image {
        Image { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Image> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidParameter("image data length"));
        }
        Ok(Image { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn same_resolution(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Rec.601 luminance plane.
    pub fn luminance(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width * self.height];
        for (i, l) in out.iter_mut().enumerate() {
            let p = &self.data[i * 3..i * 3 + 3];
            *l = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        }
        out
    }

    /// Snaps every channel to the nearest 8-bit level, matching a PNG
    /// round-trip.
    pub fn quantize_8bit(&mut self) {
        for v in &mut self.data {
            let q = math::round(v.clamp(0.0, 1.0) * 255.0);
            *v = q / 255.0;
        }
    }
}

/// Per-pixel non-negative edge weights for one view.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdgeWeightMap {
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
}

impl EdgeWeightMap {
    #[inline]
    pub fn weight(&self, x: usize, y: usize) -> f64 {
        self.weights[y * self.width + x]
    }
}

/// Absolute 4-neighbor Laplacian of the luminance plane, replicate-padded.
pub fn laplacian_edge_map(img: &Image) -> EdgeWeightMap {
    let (w, h) = (img.width, img.height);
    let lum = img.luminance();
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        lum[yc * w + xc]
    };
    let mut weights = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let lap = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1)
                - 4.0 * at(x, y);
            weights[y as usize * w + x as usize] = math::abs(lap);
        }
    }
    EdgeWeightMap { width: w, height: h, weights }
}

/// Peak signal-to-noise ratio in dB over all channels, capped at 100 dB
/// (identical images hit the cap).
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_resolution(b) {
        return Err(Error::ResolutionMismatch);
    }
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(100.0);
    }
    Ok((10.0 * math::log10(1.0 / mse)).min(100.0))
}

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_RADIUS: usize = 5;

/// Normalized 11-tap Gaussian window, sigma = 1.5.
fn ssim_kernel() -> [f64; 11] {
    let mut k = [0.0; 11];
    let sigma = 1.5;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - SSIM_RADIUS as f64;
        *v = math::exp(-d * d / (2.0 * sigma * sigma));
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable same-size convolution with replicate padding.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; 11]) -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w as isize {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xs = (x + i as isize - r).clamp(0, w as isize - 1) as usize;
                s += kv * row[xs];
            }
            tmp[y * w + x as usize] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let ys = (y + i as isize - r).clamp(0, h as isize - 1) as usize;
                s += kv * tmp[ys * w + x];
            }
            out[y as usize * w + x] = s;
        }
    }
    out
}

/// Adjoint of [`blur`]: scatter instead of gather, mirroring the clamped
/// indexing exactly so gradients through border pixels are correct.
fn blur_adjoint(grad: &[f64], w: usize, h: usize, k: &[f64; 11]) -> Vec<f64> {
    let r = SSIM_RADIUS as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w {
            let g = grad[y as usize * w + x];
            if g == 0.0 {
                continue;
            }
            for (i, kv) in k.iter().enumerate() {
                let ys = (y + i as isize - r).clamp(0, h as isize - 1) as usize;
                tmp[ys * w + x] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w as isize {
            let g = tmp[y * w + x as usize];
            if g == 0.0 {
                continue;
            }
            for (i, kv) in k.iter().enumerate() {
                let xs = (x + i as isize - r).clamp(0, w as isize - 1) as usize;
                out[y * w + xs] += kv * g;
            }
        }
    }
    out
}

fn channel_plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data.iter().skip(ch).step_by(3).copied().collect()
}

struct SsimChannel {
    value_sum: f64,
    /// dL/d(x-plane) for upstream gradient 1 on the per-pixel SSIM sum.
    grad_x: Option<Vec<f64>>,
}

/// SSIM over one channel pair; optionally also the gradient w.r.t. `x`.
fn ssim_channel(x: &[f64], y: &[f64], w: usize, h: usize, want_grad: bool) -> SsimChannel {
    let k = ssim_kernel();
    let n = w * h;
    let mu_x = blur(x, w, h, &k);
    let mu_y = blur(y, w, h, &k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a * b).collect();
    let m_xx = blur(&xx, w, h, &k);
    let m_yy = blur(&yy, w, h, &k);
    let m_xy = blur(&xy, w, h, &k);

    let mut value_sum = 0.0;
    let mut g_mu_x = if want_grad { vec![0.0; n] } else { Vec::new() };
    let mut g_m_xx = if want_grad { vec![0.0; n] } else { Vec::new() };
    let mut g_m_xy = if want_grad { vec![0.0; n] } else { Vec::new() };

    for p in 0..n {
        let (mx, my) = (mu_x[p], mu_y[p]);
        let sx = m_xx[p] - mx * mx;
        let sy = m_yy[p] - my * my;
        let sxy = m_xy[p] - mx * my;
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * sxy + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = sx + sy + SSIM_C2;
        let denom = b1 * b2;
        let s = (a1 * a2) / denom;
        value_sum += s;

        if want_grad {
            let g_a1 = a2 / denom;
            let g_a2 = a1 / denom;
            let g_b1 = -s / b1;
            let g_b2 = -s / b2;
            let g_sx = g_b2;
            let g_sxy = 2.0 * g_a2;
            // sigma_x = m_xx - mu_x^2; sigma_xy = m_xy - mu_x mu_y.
            g_mu_x[p] = 2.0 * my * g_a1 + 2.0 * mx * g_b1 - 2.0 * mx * g_sx - my * g_sxy;
            g_m_xx[p] = g_sx;
            g_m_xy[p] = g_sxy;
        }
    }

    let grad_x = if want_grad {
        let back_mu = blur_adjoint(&g_mu_x, w, h, &k);
        let back_xx = blur_adjoint(&g_m_xx, w, h, &k);
        let back_xy = blur_adjoint(&g_m_xy, w, h, &k);
        let mut g = vec![0.0; n];
        for p in 0..n {
            g[p] = back_mu[p] + 2.0 * x[p] * back_xx[p] + y[p] * back_xy[p];
        }
        Some(g)
    } else {
        None
    };

    SsimChannel { value_sum, grad_x }
}

/// Mean SSIM over channels and pixels (11x11 Gaussian window, sigma 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_resolution(b) {
        return Err(Error::ResolutionMismatch);
    }
    let (w, h) = (a.width, a.height);
    let mut total = 0.0;
    for ch in 0..3 {
        let pa = channel_plane(a, ch);
        let pb = channel_plane(b, ch);
        total += ssim_channel(&pa, &pb, w, h, false).value_sum;
    }
    Ok(total / (3.0 * (w * h) as f64))
}

/// Blended reconstruction loss `(1-lambda) * L1 + lambda * (1 - SSIM)` and
/// its analytic gradient w.r.t. every rendered channel.
pub fn loss_and_pixel_grads(render: &Image, gt: &Image, lambda: f64) -> Result<(f64, Vec<f64>)> {
    if !render.same_resolution(gt) {
        return Err(Error::ResolutionMismatch);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter("lambda must lie in [0, 1]"));
    }
    let n = render.data.len();
    let inv_n = 1.0 / n as f64;
    let mut grads = vec![0.0; n];

    let mut l1 = 0.0;
    if lambda < 1.0 {
        for i in 0..n {
            let d = render.data[i] - gt.data[i];
            l1 += math::abs(d);
            // L1 subgradient at zero is zero.
            grads[i] = if d > 0.0 {
                (1.0 - lambda) * inv_n
            } else if d < 0.0 {
                -(1.0 - lambda) * inv_n
            } else {
                0.0
            };
        }
        l1 *= inv_n;
    }

    let mut ssim_mean = 0.0;
    if lambda > 0.0 {
        let (w, h) = (render.width, render.height);
        let px_inv = 1.0 / (3.0 * (w * h) as f64);
        for ch in 0..3 {
            let pr = channel_plane(render, ch);
            let pg = channel_plane(gt, ch);
            let out = ssim_channel(&pr, &pg, w, h, true);
            ssim_mean += out.value_sum * px_inv;
            let gx = out.grad_x.expect("gradient requested");
            // d(1 - ssim_mean)/dx = -px_inv * d(sum)/dx, weighted by lambda.
            for (p, g) in gx.iter().enumerate() {
                grads[p * 3 + ch] += -lambda * px_inv * g;
            }
        }
    }

    let loss = (1.0 - lambda) * l1 + lambda * (1.0 - ssim_mean);
    Ok((loss, grads))
}
