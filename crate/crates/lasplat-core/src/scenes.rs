//! Synthetic multi-view scenes: procedural ground-truth Gaussians, ring
//! cameras, and scene initializers that stand in for SfM points.
//!
//! Ground truth is rendered with the same rasterizer used for training (at
//! full fidelity, no alpha skip), so the reconstruction problem is
//! realizable by construction. Persistence lives in the companion crate.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::camera::ViewCamera;
use crate::imaging::Image;
use crate::math::{self, event_rng, rng_tag, uniform01, Quat, Vec3};
use crate::model::{GaussianPrimitive, GaussianScene};
use crate::render::{render_scene, RenderOptions};
use crate::{Error, Result};

/// One training or test view.
#[derive(Clone, Debug)]
pub struct ViewItem {
    pub camera: ViewCamera,
    pub image: Image,
}

/// A multi-view dataset with the every-8th train/test split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub views: Vec<ViewItem>,
    /// `true` marks held-out test views (`index % 8 == 0`).
    pub test_mask: Vec<bool>,
    /// Radius of the camera-center bounding sphere.
    pub extent: f64,
    /// Generator means, kept for oracle-style initialization.
    pub gt_points: Option<Vec<Vec3>>,
}

impl Dataset {
    pub fn train_indices(&self) -> Vec<usize> {
        (0..self.views.len()).filter(|&i| !self.test_mask[i]).collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.views.len()).filter(|&i| self.test_mask[i]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::EmptyViewSet);
        }
        let (w, h) = (self.views[0].image.width, self.views[0].image.height);
        for v in &self.views {
            if v.image.width != w || v.image.height != h {
                return Err(Error::ResolutionMismatch);
            }
            v.camera.validate()?;
        }
        if self.test_mask.len() != self.views.len() {
            return Err(Error::InvalidParameter("test mask length"));
        }
        if self.train_indices().is_empty() || self.test_indices().is_empty() {
            return Err(Error::InvalidParameter("need at least one train and one test view"));
        }
        if self.extent <= 0.0 {
            return Err(Error::InvalidParameter("scene extent must be positive"));
        }
        Ok(())
    }

    /// Snaps all images to 8-bit levels, matching a PNG round-trip.
    pub fn quantize_8bit(&mut self) {
        for v in &mut self.views {
            v.image.quantize_8bit();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SceneKind {
    /// Gaussians on the faces of a box, checkerboard colors with stripe
    /// accents (strong edges everywhere).
    CheckerBox,
    /// A flat grid with a quantized two-frequency stripe texture.
    TexturedPlane,
    /// Scattered anisotropic blobs with saturated colors.
    BlobField,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticSpec {
    pub kind: SceneKind,
    pub resolution: usize,
    pub views: usize,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub texture_freq: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(kind: SceneKind, resolution: usize, views: usize, seed: u64) -> Self {
        SyntheticSpec {
            kind,
            resolution,
            views,
            ring_radius: 4.0,
            ring_height: 1.5,
            texture_freq: 6.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views < 8 {
            return Err(Error::InvalidParameter(
                "need at least 8 views for the every-8th split",
            ));
        }
        if self.resolution < 8 {
            return Err(Error::InvalidParameter("resolution too small"));
        }
        if self.ring_radius <= 0.0 {
            return Err(Error::InvalidParameter("ring radius must be positive"));
        }
        Ok(())
    }
}

/// Radius of a bounding sphere of the camera centers (centroid-anchored).
pub fn scene_extent(cams: &[ViewCamera]) -> f64 {
    let mut centroid = Vec3::ZERO;
    for c in cams {
        centroid += c.center();
    }
    centroid = centroid * (1.0 / cams.len() as f64);
    let mut r: f64 = 0.0;
    for c in cams {
        r = r.max((c.center() - centroid).norm());
    }
    r
}

fn ring_cameras(spec: &SyntheticSpec) -> Result<Vec<ViewCamera>> {
    let mut cams = Vec::with_capacity(spec.views);
    let res = spec.resolution;
    let focal = res as f64; // ~53 degree field of view
    for k in 0..spec.views {
        let theta = 2.0 * core::f64::consts::PI * k as f64 / spec.views as f64;
        let pos = Vec3::new(
            spec.ring_radius * math::cos(theta),
            spec.ring_radius * math::sin(theta),
            spec.ring_height,
        );
        let cam = ViewCamera::look_at(
            pos,
            Vec3::ZERO,
            Vec3::new(0.0, 0.0, 1.0),
            focal,
            focal,
            res,
            res,
        )?;
        cams.push(cam);
    }
    Ok(cams)
}

fn checker_color(u: f64, v: f64, freq: f64) -> Vec3 {
    let cu = math::floor(u * freq) as i64;
    let cv = math::floor(v * freq) as i64;
    let base = if (cu + cv) % 2 == 0 {
        Vec3::new(0.92, 0.92, 0.88)
    } else {
        Vec3::new(0.08, 0.10, 0.12)
    };
    // High-frequency stripe accents to sharpen edge statistics.
    let stripe = u * freq * 3.0 - math::floor(u * freq * 3.0);
    if stripe < 0.18 {
        Vec3::new(0.85, 0.15, 0.12)
    } else {
        base
    }
}

fn generator_primitives(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<GaussianPrimitive> {
    let mut prims = Vec::new();
    let jitter = |rng: &mut ChaCha8Rng, amt: f64| (uniform01(rng) - 0.5) * amt;
    match spec.kind {
        SceneKind::CheckerBox => {
            // 10x10 grid on five faces of a box (no bottom).
            let half = 1.0;
            let m = 10usize;
            let cell = 2.0 * half / m as f64;
            let faces: [(Vec3, Vec3, Vec3); 5] = [
                (Vec3::new(0.0, 0.0, half), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
                (Vec3::new(half, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)),
                (Vec3::new(-half, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.0, 0.0, 1.0)),
                (Vec3::new(0.0, half, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)),
                (Vec3::new(0.0, -half, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)),
            ];
            for (center, ea, eb) in faces {
                let normal = ea.cross(eb);
                for i in 0..m {
                    for j in 0..m {
                        let u = (i as f64 + 0.5) / m as f64;
                        let v = (j as f64 + 0.5) / m as f64;
                        let pos = center
                            + ea * ((u - 0.5) * 2.0 * half + jitter(rng, cell * 0.2))
                            + eb * ((v - 0.5) * 2.0 * half + jitter(rng, cell * 0.2));
                        let s_inplane = cell * (0.45 + 0.15 * uniform01(rng));
                        // Flatten along the face normal.
                        let scale = ea.map(math::abs) * s_inplane
                            + eb.map(math::abs) * s_inplane
                            + normal.map(math::abs) * (s_inplane * 0.25);
                        prims.push(GaussianPrimitive::new(
                            pos,
                            scale,
                            Quat::IDENTITY,
                            0.88,
                            checker_color(u, v, spec.texture_freq),
                        ));
                    }
                }
            }
        }
        SceneKind::TexturedPlane => {
            let half = 1.2;
            let m = 22usize;
            let cell = 2.0 * half / m as f64;
            let f = spec.texture_freq;
            for i in 0..m {
                for j in 0..m {
                    let u = (i as f64 + 0.5) / m as f64;
                    let v = (j as f64 + 0.5) / m as f64;
                    let x = (u - 0.5) * 2.0 * half + jitter(rng, cell * 0.25);
                    let y = (v - 0.5) * 2.0 * half + jitter(rng, cell * 0.25);
                    let z = jitter(rng, 0.04);
                    let sa = math::sin(u * f * core::f64::consts::PI) > 0.0;
                    let sb = math::sin(v * f * 1.7 * core::f64::consts::PI) > 0.0;
                    let color = match (sa, sb) {
                        (true, true) => Vec3::new(0.93, 0.86, 0.25),
                        (true, false) => Vec3::new(0.12, 0.35, 0.75),
                        (false, true) => Vec3::new(0.80, 0.20, 0.25),
                        (false, false) => Vec3::new(0.10, 0.60, 0.30),
                    };
                    prims.push(GaussianPrimitive::new(
                        Vec3::new(x, y, z),
                        Vec3::new(cell * 0.55, cell * 0.55, cell * 0.2),
                        Quat::IDENTITY,
                        0.9,
                        color,
                    ));
                }
            }
        }
        SceneKind::BlobField => {
            for _ in 0..40 {
                let dir = Vec3::new(
                    uniform01(rng) * 2.0 - 1.0,
                    uniform01(rng) * 2.0 - 1.0,
                    uniform01(rng) * 2.0 - 1.0,
                );
                let pos = dir * (0.9 * math::powf(uniform01(rng), 1.0 / 3.0) / dir.norm().max(1e-9));
                let scale = Vec3::new(
                    0.06 + 0.28 * uniform01(rng),
                    0.06 + 0.28 * uniform01(rng),
                    0.06 + 0.28 * uniform01(rng),
                );
                let axis = Vec3::new(
                    uniform01(rng) - 0.5,
                    uniform01(rng) - 0.5,
                    uniform01(rng) - 0.5,
                );
                let color = Vec3::new(
                    0.15 + 0.85 * uniform01(rng),
                    0.15 + 0.85 * uniform01(rng),
                    0.15 + 0.85 * uniform01(rng),
                );
                prims.push(GaussianPrimitive::new(
                    pos,
                    scale,
                    Quat::from_axis_angle(axis, uniform01(rng) * core::f64::consts::PI),
                    0.7 + 0.25 * uniform01(rng),
                    color,
                ));
            }
        }
    }
    prims
}

/// Builds the generator scene, places ring cameras, and renders ground
/// truth at full fidelity. Returns the dataset and the generator scene.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, GaussianScene)> {
    spec.validate()?;
    let mut rng = event_rng(spec.seed, rng_tag::SCENE_GEN, 0);
    let prims = generator_primitives(spec, &mut rng);
    let cams = ring_cameras(spec)?;

    let gt_opts = RenderOptions { alpha_skip: 0.0 };
    let mut views = Vec::with_capacity(cams.len());
    for cam in &cams {
        let bundle = render_scene(&prims, cam, None, gt_opts);
        views.push(ViewItem { camera: cam.clone(), image: bundle.image });
    }
    let test_mask: Vec<bool> = (0..views.len()).map(|i| i % 8 == 0).collect();
    let extent = scene_extent(&cams);
    let gt_points = Some(prims.iter().map(|g| g.mean).collect());

    let ds = Dataset { views, test_mask, extent, gt_points };
    ds.validate()?;
    Ok((ds, GaussianScene::from_primitives(prims)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum InitMode {
    /// Means uniform in the centroid +- extent box.
    RandomInExtent,
    /// Means drawn from the persisted generator points with small jitter.
    FromGtPoints,
}

/// Builds the initial scene that training starts from.
pub fn init_scene(
    ds: &Dataset,
    count: usize,
    mode: InitMode,
    seed: u64,
) -> Result<GaussianScene> {
    if count == 0 {
        return Err(Error::InvalidParameter("init count must be at least 1"));
    }
    let mut rng = event_rng(seed, rng_tag::SCENE_INIT, 0);
    let mut centroid = Vec3::ZERO;
    for v in &ds.views {
        centroid += v.camera.center();
    }
    centroid = centroid * (1.0 / ds.views.len() as f64);

    // Initial isotropic size from a uniform-coverage heuristic; content
    // occupies a fraction of the camera sphere, hence the 0.35 factor.
    let content_radius = 0.35 * ds.extent;
    let iso_scale = (content_radius / math::sqrt(count as f64)).max(1e-4);

    let mut prims = Vec::with_capacity(count);
    for _ in 0..count {
        let mean = match mode {
            InitMode::RandomInExtent => {
                Vec3::new(
                    centroid.x + (uniform01(&mut rng) - 0.5) * 2.0 * content_radius,
                    centroid.y + (uniform01(&mut rng) - 0.5) * 2.0 * content_radius,
                    centroid.z + (uniform01(&mut rng) - 0.5) * 2.0 * content_radius,
                )
            }
            InitMode::FromGtPoints => {
                let pts = ds
                    .gt_points
                    .as_ref()
                    .ok_or(Error::InvalidParameter("dataset has no generator points"))?;
                let p = pts[math::uniform_index(&mut rng, pts.len())];
                p + Vec3::new(
                    (uniform01(&mut rng) - 0.5) * 0.02,
                    (uniform01(&mut rng) - 0.5) * 0.02,
                    (uniform01(&mut rng) - 0.5) * 0.02,
                )
            }
        };
        prims.push(GaussianPrimitive::new(
            mean,
            Vec3::splat(iso_scale),
            Quat::IDENTITY,
            0.1,
            Vec3::splat(0.5),
        ));
    }
    Ok(GaussianScene::from_primitives(prims))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::project;

    fn spec(kind: SceneKind) -> SyntheticSpec {
        SyntheticSpec::new(kind, 48, 8, 7)
    }

    #[test]
    fn split_follows_every_8th_rule() {
        let (ds, _) = generate_synthetic(&spec(SceneKind::BlobField)).unwrap();
        assert_eq!(ds.views.len(), 8);
        assert_eq!(ds.test_indices(), vec![0]);
        assert_eq!(ds.train_indices().len(), 7);

        let (ds16, _) =
            generate_synthetic(&SyntheticSpec::new(SceneKind::BlobField, 48, 16, 7)).unwrap();
        assert_eq!(ds16.test_indices(), vec![0, 8]);
    }

    #[test]
    fn rejects_too_few_views() {
        let bad = SyntheticSpec::new(SceneKind::CheckerBox, 48, 4, 7);
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(SceneKind::CheckerBox);
        let (a, _) = generate_synthetic(&s).unwrap();
        let (b, _) = generate_synthetic(&s).unwrap();
        for (va, vb) in a.views.iter().zip(b.views.iter()) {
            assert_eq!(va.image.data, vb.image.data);
        }
        assert_eq!(a.extent, b.extent);
    }

    #[test]
    fn single_blob_projects_to_image_center_of_mass() {
        // A dataset made of exactly one Gaussian: the brightest pixel of the
        // rendered view must sit at the projected mean.
        let s = SyntheticSpec::new(SceneKind::BlobField, 64, 8, 3);
        let (ds, gen) = generate_synthetic(&s).unwrap();
        let g = gen.primitives[0];
        let lone = [g];
        let cam = &ds.views[1].camera;
        let bundle = render_scene(&lone, cam, None, RenderOptions { alpha_skip: 0.0 });
        let proj = project(&g, cam, 0).unwrap();
        let mut best = (0usize, 0usize, -1.0f64);
        for y in 0..64 {
            for x in 0..64 {
                let p = bundle.image.pixel(x, y);
                let lum = p[0] + p[1] + p[2];
                if lum > best.2 {
                    best = (x, y, lum);
                }
            }
        }
        assert!(
            ((best.0 as f64 + 0.5) - proj.mean2d[0]).abs() <= 1.0
                && ((best.1 as f64 + 0.5) - proj.mean2d[1]).abs() <= 1.0,
            "peak {best:?} vs projected {:?}",
            proj.mean2d
        );
    }

    #[test]
    fn extent_is_positive_and_matches_ring() {
        let (ds, _) = generate_synthetic(&spec(SceneKind::TexturedPlane)).unwrap();
        assert!(ds.extent > 0.0);
        // Ring cameras are symmetric around their centroid, so the extent is
        // simply the ring radius.
        assert!((ds.extent - 4.0).abs() < 1e-9, "extent {}", ds.extent);
    }

    #[test]
    fn init_scene_modes() {
        let (ds, _) = generate_synthetic(&spec(SceneKind::CheckerBox)).unwrap();
        let scene = init_scene(&ds, 100, InitMode::RandomInExtent, 5).unwrap();
        assert_eq!(scene.len(), 100);
        assert!(scene.is_aligned());
        for g in &scene.primitives {
            assert!((g.opacity() - 0.1).abs() < 1e-12);
        }
        let again = init_scene(&ds, 100, InitMode::RandomInExtent, 5).unwrap();
        assert_eq!(scene.primitives, again.primitives);

        let from_pts = init_scene(&ds, 50, InitMode::FromGtPoints, 5).unwrap();
        assert_eq!(from_pts.len(), 50);

        let mut no_pts = ds.clone();
        no_pts.gt_points = None;
        assert!(init_scene(&no_pts, 50, InitMode::FromGtPoints, 5).is_err());
    }
}
