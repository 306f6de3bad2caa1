//! Per-primitive Adam state and parameter updates.
//!
//! Each primitive owns one moment slot per parameter group so densification
//! can zero a newborn child's state (or just the opacity slot after a reset)
//! without touching its siblings. Bias correction uses the slot's own step
//! counter, which restarts at zero whenever the slot is cleared.

use crate::math::{self, Vec3};
use crate::model::GaussianScene;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamSlot<const N: usize> {
    pub m: [f64; N],
    pub v: [f64; N],
    pub step: u64,
}

impl<const N: usize> Default for AdamSlot<N> {
    fn default() -> Self {
        AdamSlot { m: [0.0; N], v: [0.0; N], step: 0 }
    }
}

impl<const N: usize> AdamSlot<N> {
    pub fn zero(&mut self) {
        *self = AdamSlot { m: [0.0; N], v: [0.0; N], step: 0 };
    }

    /// One Adam update; returns the new parameter values.
    pub fn step(&mut self, params: [f64; N], grads: [f64; N], lr: f64) -> [f64; N] {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - math::powf(ADAM_BETA1, t as f64);
        let bc2 = 1.0 - math::powf(ADAM_BETA2, t as f64);
        let mut out = params;
        for i in 0..N {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grads[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            out[i] = params[i] - lr * m_hat / (math::sqrt(v_hat) + ADAM_EPS);
        }
        out
    }
}

/// Moment slots for one primitive, one per parameter group.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OptState {
    pub mean: AdamSlot<3>,
    pub log_scale: AdamSlot<3>,
    pub rotation: AdamSlot<4>,
    pub opacity: AdamSlot<1>,
    pub color: AdamSlot<3>,
}

/// Gradient of the loss w.r.t. one primitive's raw parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamGrad {
    pub mean: Vec3,
    pub log_scale: Vec3,
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: Vec3,
}

impl ParamGrad {
    pub fn add_assign(&mut self, o: &ParamGrad) {
        self.mean += o.mean;
        self.log_scale += o.log_scale;
        for k in 0..4 {
            self.rotation[k] += o.rotation[k];
        }
        self.opacity_logit += o.opacity_logit;
        self.color += o.color;
    }

    pub fn scale(&mut self, s: f64) {
        self.mean = self.mean * s;
        self.log_scale = self.log_scale * s;
        for g in &mut self.rotation {
            *g *= s;
        }
        self.opacity_logit *= s;
        self.color = self.color * s;
    }

    pub fn abs_max(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in self
            .mean
            .to_array()
            .iter()
            .chain(self.log_scale.to_array().iter())
            .chain(self.rotation.iter())
            .chain([self.opacity_logit].iter())
            .chain(self.color.to_array().iter())
        {
            m = m.max(math::abs(*v));
        }
        m
    }
}

/// Learning rates per parameter group for a single step.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LearningRates {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

/// Applies one Adam step to every primitive and renormalizes quaternions.
pub fn step_scene(scene: &mut GaussianScene, grads: &[ParamGrad], lrs: &LearningRates) {
    debug_assert_eq!(grads.len(), scene.len());
    for ((prim, opt), grad) in scene
        .primitives
        .iter_mut()
        .zip(scene.opt_state.iter_mut())
        .zip(grads.iter())
    {
        prim.mean = Vec3::from_array(opt.mean.step(
            prim.mean.to_array(),
            grad.mean.to_array(),
            lrs.position,
        ));
        prim.log_scale = Vec3::from_array(opt.log_scale.step(
            prim.log_scale.to_array(),
            grad.log_scale.to_array(),
            lrs.log_scale,
        ));
        let rot =
            opt.rotation
                .step(prim.rotation.to_array(), grad.rotation, lrs.rotation);
        prim.rotation = crate::math::Quat::from_array(rot).normalized();
        prim.opacity_logit = opt.opacity.step(
            [prim.opacity_logit],
            [grad.opacity_logit],
            lrs.opacity,
        )[0];
        prim.color = Vec3::from_array(opt.color.step(
            prim.color.to_array(),
            grad.color.to_array(),
            lrs.color,
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn adam_first_step_moves_by_lr() {
        // With fresh moments, |update| = lr * g / (|g| + eps) ~= lr * sign(g).
        let mut slot = AdamSlot::<1>::default();
        let out = slot.step([1.0], [0.5], 0.01);
        assert_relative_eq!(out[0], 1.0 - 0.01, epsilon = 1e-9);
        assert_eq!(slot.step, 1);
    }

    #[test]
    fn adam_zero_grad_decays_moments() {
        let mut slot = AdamSlot::<1>::default();
        slot.step([0.0], [1.0], 0.1);
        let before = slot.m[0];
        slot.step([0.0], [0.0], 0.1);
        assert!(slot.m[0] < before);
        assert!(slot.m[0] > 0.0);
    }

    #[test]
    fn step_scene_renormalizes_quaternions() {
        use crate::math::{Quat, Vec3};
        use crate::model::{GaussianPrimitive, GaussianScene};
        let g = GaussianPrimitive::new(
            Vec3::ZERO,
            Vec3::splat(1.0),
            Quat::IDENTITY,
            0.5,
            Vec3::splat(0.5),
        );
        let mut scene = GaussianScene::from_primitives(alloc::vec![g]);
        let mut grad = ParamGrad::default();
        grad.rotation = [0.3, -0.8, 0.1, 0.4];
        let lrs = LearningRates {
            position: 1e-3,
            log_scale: 1e-3,
            rotation: 0.5,
            opacity: 1e-2,
            color: 1e-3,
        };
        step_scene(&mut scene, &[grad], &lrs);
        assert_relative_eq!(scene.primitives[0].rotation.norm(), 1.0, epsilon = 1e-12);
    }
}
