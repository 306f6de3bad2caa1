//! Adaptive density control: the stock clone/split baseline and the improved
//! pipeline (edge-aware candidate selection, long-axis splitting, growth
//! budgeting, recovery-aware pruning).

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::camera::ViewCamera;
use crate::imaging::EdgeWeightMap;
use crate::math::{self, uniform01, uniform_index, Vec3};
use crate::model::{longest_axis, GaussianPrimitive, GaussianScene};
use crate::render::{render_scene, RenderOptions};
use crate::{Error, Result};

/// Per-primitive accumulators gathered between densification rounds.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensifyStats {
    /// Running sum of per-view absolute positional gradient norms.
    pub sum_abs_grad: f64,
    /// Running sum of per-view signed positional gradient norms.
    pub sum_grad: f64,
    /// Number of views the primitive participated in since the last reset.
    pub view_count: u32,
    /// Running edge-aware score sum over sampled views.
    pub sum_eas: f64,
    pub eas_views: u32,
}

impl DensifyStats {
    /// View-averaged absolute gradient; zero when the primitive was unseen.
    pub fn average_abs_grad(&self) -> f64 {
        if self.view_count == 0 {
            0.0
        } else {
            self.sum_abs_grad / self.view_count as f64
        }
    }

    pub fn average_signed_grad(&self) -> f64 {
        if self.view_count == 0 {
            0.0
        } else {
            self.sum_grad / self.view_count as f64
        }
    }

    pub fn average_eas(&self) -> f64 {
        if self.eas_views == 0 {
            0.0
        } else {
            self.sum_eas / self.eas_views as f64
        }
    }
}

/// All densification schedule constants, expressed in absolute iterations.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DensifyPolicy {
    /// Threshold on the view-averaged absolute positional gradient.
    pub abs_grad_threshold: f64,
    /// Views sampled per round when scoring candidates.
    pub eas_sample_views: usize,
    /// Child offset as a fraction of the parent's long semi-axis, in (0, 0.5].
    pub las_d_fraction: f64,
    /// Child opacity as a fraction of the parent's.
    pub las_opacity_factor: f64,
    /// Extra multiplier on the tangent minor-axis factor; 1.0 is the
    /// geometric optimum, other values exist for ablations.
    pub las_rs_multiplier: f64,
    /// Final Gaussian budget.
    pub budget_max: usize,
    pub densify_start_iter: usize,
    pub densify_end_iter: usize,
    /// Iterations between densification rounds.
    pub densify_interval: usize,
    /// Iterations at which the bottom fraction by opacity is pruned.
    pub rap_iters: Vec<usize>,
    pub rap_fraction: f64,
    pub reset_interval: usize,
    pub reset_opacity_value: f64,
    /// Opacities above this get reset (defaults to the reset value itself).
    pub reset_eligibility_threshold: f64,
    pub min_opacity_prune: f64,
    /// Baseline clone-vs-split size cutoff, as a fraction of scene extent.
    pub baseline_clone_scale_fraction: f64,
    /// Baseline-only prune of huge Gaussians, as a fraction of scene extent.
    pub baseline_large_prune_scale: f64,
}

impl Default for DensifyPolicy {
    /// Reference-scale schedule (30k iterations).
    fn default() -> Self {
        DensifyPolicy {
            abs_grad_threshold: 0.0003,
            eas_sample_views: 8,
            las_d_fraction: 0.45,
            las_opacity_factor: 0.6,
            las_rs_multiplier: 1.0,
            budget_max: 1_000_000,
            densify_start_iter: 500,
            densify_end_iter: 15_000,
            densify_interval: 100,
            rap_iters: vec![3_300, 6_300],
            rap_fraction: 0.2,
            reset_interval: 3_000,
            reset_opacity_value: 0.05,
            reset_eligibility_threshold: 0.05,
            min_opacity_prune: 0.005,
            baseline_clone_scale_fraction: 0.01,
            baseline_large_prune_scale: 0.1,
        }
    }
}

impl DensifyPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.las_d_fraction > 0.0 && self.las_d_fraction <= 0.5) {
            return Err(Error::InvalidParameter("las_d_fraction must lie in (0, 0.5]"));
        }
        if !(self.las_opacity_factor > 0.0 && self.las_opacity_factor <= 1.0) {
            return Err(Error::InvalidParameter("las_opacity_factor must lie in (0, 1]"));
        }
        if self.densify_end_iter <= self.densify_start_iter {
            return Err(Error::InvalidParameter("densify window is empty"));
        }
        if self.densify_interval == 0 {
            return Err(Error::InvalidParameter("densify_interval must be positive"));
        }
        let mut prev = 0usize;
        for (k, &it) in self.rap_iters.iter().enumerate() {
            if k > 0 && it <= prev {
                return Err(Error::InvalidParameter("rap_iters must be strictly increasing"));
            }
            if it >= self.densify_end_iter {
                return Err(Error::InvalidParameter("rap_iters must precede densify_end_iter"));
            }
            prev = it;
        }
        if !(self.rap_fraction > 0.0 && self.rap_fraction < 1.0) {
            return Err(Error::InvalidParameter("rap_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DensifyMode {
    BaselineAdc,
    Improved,
}

/// How a split chooses the children's minor-axis scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MinorScale {
    /// The tangent construction: factor `sqrt(1 - d^2/L0^2)` on each minor
    /// axis, which puts the child minor endpoints on the parent's 1-sigma
    /// surface.
    Tangent,
    /// Tangent factor times an extra multiplier (ablations).
    TangentScaled(f64),
    /// Fixed factor of the parent's minor scales (geometry mutation tests).
    Absolute(f64),
}

/// Deterministic split along the parent's longest principal axis.
///
/// Children sit at `mean +- d u` with long scale `L0 - d`, so each child
/// touches the parent's long-axis endpoint exactly; minor scales follow the
/// tangent construction.
pub fn long_axis_split(
    g: &GaussianPrimitive,
    d_fraction: f64,
    opacity_factor: f64,
) -> Result<(GaussianPrimitive, GaussianPrimitive)> {
    long_axis_split_with(g, d_fraction, opacity_factor, MinorScale::Tangent)
}

pub fn long_axis_split_with(
    g: &GaussianPrimitive,
    d_fraction: f64,
    opacity_factor: f64,
    minor: MinorScale,
) -> Result<(GaussianPrimitive, GaussianPrimitive)> {
    if !(d_fraction > 0.0 && d_fraction <= 0.5) {
        return Err(Error::InvalidParameter("d_fraction must lie in (0, 0.5]"));
    }
    if !(opacity_factor > 0.0 && opacity_factor <= 1.0) {
        return Err(Error::InvalidParameter("opacity_factor must lie in (0, 1]"));
    }
    let (dir, long) = longest_axis(g);
    let axis = g.scales().argmax();
    let d = d_fraction * long;

    let minor_factor = match minor {
        MinorScale::Tangent => math::sqrt(1.0 - d_fraction * d_fraction),
        MinorScale::TangentScaled(m) => m * math::sqrt(1.0 - d_fraction * d_fraction),
        MinorScale::Absolute(f) => f,
    };

    let mut log_scale = g.log_scale;
    for k in 0..3 {
        if k == axis {
            log_scale[k] = math::ln(long - d);
        } else {
            log_scale[k] += math::ln(minor_factor);
        }
    }
    let child_opacity = opacity_factor * g.opacity();
    let opacity_logit = math::logit(child_opacity);

    let template = GaussianPrimitive {
        mean: g.mean,
        log_scale,
        rotation: g.rotation,
        opacity_logit,
        color: g.color,
    };
    let mut a = template;
    a.mean = g.mean + dir * d;
    let mut b = template;
    b.mean = g.mean - dir * d;
    Ok((a, b))
}

/// Exact duplicate (the stock under-reconstruction operation); the caller
/// appends it with zeroed optimizer state.
pub fn baseline_clone(g: &GaussianPrimitive) -> GaussianPrimitive {
    *g
}

/// Stock over-reconstruction split: children shrunk to 1/1.6 of the parent,
/// means sampled from the parent's own distribution.
pub fn baseline_split(
    g: &GaussianPrimitive,
    rng: &mut ChaCha8Rng,
) -> (GaussianPrimitive, GaussianPrimitive) {
    let shrink = math::ln(1.6);
    let r = g.rotation.rotation_matrix();
    let s = g.scales();
    let sample_mean = |rng: &mut ChaCha8Rng| {
        let z = Vec3::new(
            math::standard_normal(rng),
            math::standard_normal(rng),
            math::standard_normal(rng),
        );
        g.mean + r.mul_vec(s.mul_elem(z))
    };
    let mut a = *g;
    a.mean = sample_mean(rng);
    a.log_scale = g.log_scale - Vec3::splat(shrink);
    let mut b = *g;
    b.mean = sample_mean(rng);
    b.log_scale = g.log_scale - Vec3::splat(shrink);
    (a, b)
}

/// Square-root growth curve: `floor(N_max * sqrt(clamp((I - I_start) /
/// (I_end - I_start), 0, 1)))`. Callers cap it from below by the current and
/// initial scene counts (the budget limits additions, it never prunes).
pub fn growth_budget(iter: usize, policy: &DensifyPolicy) -> usize {
    let start = policy.densify_start_iter as f64;
    let end = policy.densify_end_iter as f64;
    let ratio = ((iter as f64 - start) / (end - start)).clamp(0.0, 1.0);
    math::floor(policy.budget_max as f64 * math::sqrt(ratio)) as usize
}

/// Removes the `floor(fraction * n)` primitives with the smallest opacity;
/// ties prune the lower index first.
pub fn recovery_aware_prune(scene: &mut GaussianScene, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter("prune fraction must lie in (0, 1)"));
    }
    let n = scene.len();
    let k = math::floor(fraction * n as f64) as usize;
    if k == 0 {
        return Ok(0);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        scene.primitives[a]
            .opacity()
            .partial_cmp(&scene.primitives[b].opacity())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut keep = vec![true; n];
    for &i in order.iter().take(k) {
        keep[i] = false;
    }
    scene.retain_mask(&keep);
    Ok(k)
}

/// Clamps opacities above the eligibility threshold down to the reset value
/// and zeroes the affected opacity moments.
pub fn reset_opacity(scene: &mut GaussianScene, policy: &DensifyPolicy) {
    let new_logit = math::logit(policy.reset_opacity_value);
    for (prim, opt) in scene.primitives.iter_mut().zip(scene.opt_state.iter_mut()) {
        if prim.opacity() > policy.reset_eligibility_threshold {
            prim.opacity_logit = new_logit;
            opt.opacity.zero();
        }
    }
}

/// Drops primitives whose opacity fell below `min_opacity`.
pub fn prune_transparent(scene: &mut GaussianScene, min_opacity: f64) -> usize {
    let keep: Vec<bool> = scene
        .primitives
        .iter()
        .map(|g| g.opacity() >= min_opacity)
        .collect();
    let removed = keep.iter().filter(|&&k| !k).count();
    if removed > 0 {
        scene.retain_mask(&keep);
    }
    removed
}

/// Drops primitives whose largest world-space scale exceeds `max_scale`
/// (stock hygiene; the improved pipeline deliberately skips it).
pub fn prune_large(scene: &mut GaussianScene, max_scale: f64) -> usize {
    let keep: Vec<bool> = scene
        .primitives
        .iter()
        .map(|g| {
            let s = g.scales();
            s[s.argmax()] <= max_scale
        })
        .collect();
    let removed = keep.iter().filter(|&&k| !k).count();
    if removed > 0 {
        scene.retain_mask(&keep);
    }
    removed
}

/// Renders `n_s` sampled views with their cached edge maps and accumulates
/// per-primitive edge-aware scores into the scene stats; returns the
/// per-primitive averages.
pub fn accumulate_eas(
    scene: &mut GaussianScene,
    cams: &[ViewCamera],
    edges: &[&EdgeWeightMap],
    n_s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if cams.is_empty() {
        return Err(Error::EmptyViewSet);
    }
    if n_s == 0 {
        return Err(Error::InvalidParameter("n_s must be at least 1"));
    }
    debug_assert_eq!(cams.len(), edges.len());
    let k = n_s.min(cams.len());
    let mut order: Vec<usize> = (0..cams.len()).collect();
    math::shuffle(&mut order, rng);
    let mut sampled: Vec<usize> = order[..k].to_vec();
    // Accumulate in view order so the result is independent of the draw
    // order (and of the generator when the sample exhausts the set).
    sampled.sort_unstable();

    for &vi in &sampled {
        let bundle = render_scene(
            &scene.primitives,
            &cams[vi],
            Some(edges[vi]),
            RenderOptions::default(),
        );
        for (stat, s) in scene.stats.iter_mut().zip(bundle.per_gaussian_eas.iter()) {
            stat.sum_eas += s;
            stat.eas_views += 1;
        }
    }
    Ok(scene.stats.iter().map(|s| s.average_eas()).collect())
}

/// Candidates exceed the absolute-gradient threshold; when there are more
/// candidates than budget headroom, `headroom` of them are drawn without
/// replacement with probability proportional to their edge-aware score
/// (epsilon-smoothed so zero-score candidates stay reachable).
pub fn select_split_set(
    scene: &GaussianScene,
    eas: &[f64],
    budget_now: usize,
    policy: &DensifyPolicy,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    debug_assert_eq!(eas.len(), scene.len());
    let candidates: Vec<usize> = (0..scene.len())
        .filter(|&i| scene.stats[i].average_abs_grad() > policy.abs_grad_threshold)
        .collect();
    let headroom = budget_now.saturating_sub(scene.len());
    if headroom == 0 || candidates.is_empty() {
        return Vec::new();
    }
    if candidates.len() <= headroom {
        return candidates;
    }

    const EPS: f64 = 1e-12;
    let mut weights: Vec<f64> = candidates.iter().map(|&i| eas[i] + EPS).collect();
    let mut total: f64 = weights.iter().sum();
    let mut chosen = Vec::with_capacity(headroom);
    for _ in 0..headroom {
        let mut u = uniform01(rng) * total;
        let mut pick = usize::MAX;
        for (k, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            if u < w {
                pick = k;
                break;
            }
            u -= w;
        }
        if pick == usize::MAX {
            // Guard against accumulated rounding: fall back to the last
            // available candidate.
            pick = weights.iter().rposition(|&w| w > 0.0).unwrap();
        }
        chosen.push(candidates[pick]);
        total -= weights[pick];
        weights[pick] = 0.0;
    }
    chosen.sort_unstable();
    chosen
}

/// Outcome of one densification round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundReport {
    pub candidates: usize,
    pub splits: usize,
    pub clones: usize,
    pub count_before: usize,
    pub count_after: usize,
    pub budget_now: usize,
}

/// One densification round. Improved mode scores candidates with sampled
/// edge-aware renders, splits under the growth budget, prunes transparent
/// primitives, then resets the accumulators. Baseline mode applies the stock
/// clone/split rule capped at the flat budget.
#[allow(clippy::too_many_arguments)]
pub fn densify_round(
    scene: &mut GaussianScene,
    cams: &[ViewCamera],
    edges: &[&EdgeWeightMap],
    iter: usize,
    policy: &DensifyPolicy,
    mode: DensifyMode,
    scene_extent: f64,
    initial_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RoundReport> {
    let count_before = scene.len();
    let mut report = RoundReport { count_before, ..RoundReport::default() };

    match mode {
        DensifyMode::Improved => {
            let eas = accumulate_eas(scene, cams, edges, policy.eas_sample_views, rng)?;
            let budget_now = growth_budget(iter, policy)
                .max(scene.len())
                .max(initial_count);
            report.budget_now = budget_now;
            report.candidates = scene
                .stats
                .iter()
                .filter(|s| s.average_abs_grad() > policy.abs_grad_threshold)
                .count();
            let selected = select_split_set(scene, &eas, budget_now, policy, rng);
            report.splits = selected.len();

            let mut children = Vec::with_capacity(selected.len() * 2);
            let mut keep = vec![true; scene.len()];
            for &i in &selected {
                let (a, b) = long_axis_split_with(
                    &scene.primitives[i],
                    policy.las_d_fraction,
                    policy.las_opacity_factor,
                    MinorScale::TangentScaled(policy.las_rs_multiplier),
                )?;
                children.push(a);
                children.push(b);
                keep[i] = false;
            }
            scene.retain_mask(&keep);
            for child in children {
                scene.push(child);
            }
        }
        DensifyMode::BaselineAdc => {
            let budget_now = policy.budget_max.max(scene.len()).max(initial_count);
            report.budget_now = budget_now;
            let mut candidates: Vec<usize> = (0..scene.len())
                .filter(|&i| scene.stats[i].average_signed_grad() > policy.abs_grad_threshold)
                .collect();
            report.candidates = candidates.len();
            let headroom = budget_now - scene.len();
            if candidates.len() > headroom {
                // Keep the strongest gradients when capped.
                candidates.sort_unstable_by(|&a, &b| {
                    scene.stats[b]
                        .average_signed_grad()
                        .partial_cmp(&scene.stats[a].average_signed_grad())
                        .unwrap()
                        .then(a.cmp(&b))
                });
                candidates.truncate(headroom);
                candidates.sort_unstable();
            }

            let size_cutoff = policy.baseline_clone_scale_fraction * scene_extent;
            let mut keep = vec![true; scene.len()];
            let mut newborn = Vec::new();
            for &i in &candidates {
                let g = scene.primitives[i];
                let s = g.scales();
                if s[s.argmax()] < size_cutoff {
                    newborn.push(baseline_clone(&g));
                    report.clones += 1;
                } else {
                    let (a, b) = baseline_split(&g, rng);
                    newborn.push(a);
                    newborn.push(b);
                    keep[i] = false;
                    report.splits += 1;
                }
            }
            scene.retain_mask(&keep);
            for child in newborn {
                scene.push(child);
            }
        }
    }

    prune_transparent(scene, policy.min_opacity_prune);
    scene.reset_stats();
    report.count_after = scene.len();
    debug_assert!(scene.is_aligned());
    Ok(report)
}

/// Draws `k` distinct indices in `[0, n)`.
pub fn sample_distinct(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = k.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_index(rng, n - i);
        order.swap(i, j);
    }
    order.truncate(k);
    order
}
