//! Adam with global-norm clipping and weight decay.

use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightDecayMode {
    /// `θ ← θ·(1 − α·λ)` before the Adam update.
    #[default]
    Decoupled,
    /// `g ← g + λ·θ` before the Adam moments.
    CoupledL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecayMode,
    pub grad_clip_norm: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.001,
            weight_decay_mode: WeightDecayMode::Decoupled,
            grad_clip_norm: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.alpha)));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("Adam eps must be positive and weight decay non-negative".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config(format!("gradient clip norm must be positive, got {}", self.grad_clip_norm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Scale all gradients so that their global norm is at most `max_norm`.
pub fn clip_grad_norm(params: &mut ParameterSet, max_norm: f64) -> f64 {
    let norm = params.grad_norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// One descent step on the gradients stored in `params`; `t` counts steps from 1.
///
/// Order: clip to the global norm, apply weight decay, then Adam with bias
/// correction. Gradients are left in place.
pub fn adam_step(params: &mut ParameterSet, cfg: &OptimizerConfig, t: u64) -> Result<StepStats> {
    if t == 0 {
        return Err(Error::State("Adam step counter starts at 1".into()));
    }
    if let Some(p) = params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::Numerics(format!("non-finite gradient in `{}`", p.name)));
    }
    let grad_norm = clip_grad_norm(params, cfg.grad_clip_norm);
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    let decay = cfg.alpha * cfg.weight_decay;
    for p in params.iter_mut().filter(|p| p.trainable) {
        for i in 0..p.value.len() {
            let mut g = p.grad[i];
            match cfg.weight_decay_mode {
                WeightDecayMode::Decoupled => p.value[i] -= decay * p.value[i],
                WeightDecayMode::CoupledL2 => g += cfg.weight_decay * p.value[i],
            }
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = p.m[i] / bc1;
            let v_hat = p.v[i] / bc2;
            p.value[i] -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(StepStats {
        grad_norm,
        clipped: grad_norm > cfg.grad_clip_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(value: f64, grad: f64) -> ParameterSet {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", &[1], true, vec![value]);
        ps.get_mut(id).grad[0] = grad;
        ps
    }

    #[test]
    fn zero_gradient_without_decay_is_fixpoint() {
        let mut ps = scalar(0.7, 0.0);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        for t in 1..=5 {
            adam_step(&mut ps, &cfg, t).unwrap();
        }
        assert_eq!(ps.iter().next().unwrap().value[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_alpha() {
        let mut ps = scalar(0.0, 1.0);
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        adam_step(&mut ps, &cfg, 1).unwrap();
        let expected = -cfg.alpha * 1.0 / (1.0 + cfg.eps);
        assert!((ps.iter().next().unwrap().value[0] - expected).abs() < 1e-12 * cfg.alpha);
    }

    #[test]
    fn clipping_rescales_to_unit_norm() {
        let mut ps = ParameterSet::new();
        let id = ps.add("w", &[2], true, vec![0.0, 0.0]);
        ps.get_mut(id).grad.copy_from_slice(&[3.0, 4.0]);
        let pre = clip_grad_norm(&mut ps, 1.0);
        assert_eq!(pre, 5.0);
        assert!((ps.grad_norm() - 1.0).abs() < 1e-15);
        let g = &ps.get(id).grad;
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_numerics_error() {
        let mut ps = scalar(1.0, f64::NAN);
        let err = adam_step(&mut ps, &OptimizerConfig::default(), 1).unwrap_err();
        assert!(err.is_numerics_error());
        assert_eq!(ps.iter().next().unwrap().value[0], 1.0);
    }

    #[test]
    fn decoupled_and_coupled_decay_differ() {
        let cfg = OptimizerConfig {
            alpha: 0.1,
            weight_decay: 0.5,
            ..OptimizerConfig::default()
        };
        let mut a = scalar(2.0, 0.0);
        adam_step(&mut a, &cfg, 1).unwrap();
        assert!((a.iter().next().unwrap().value[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
        let mut b = scalar(2.0, 0.0);
        let coupled = OptimizerConfig {
            weight_decay_mode: WeightDecayMode::CoupledL2,
            ..cfg
        };
        adam_step(&mut b, &coupled, 1).unwrap();
        // Adam normalizes the decay gradient, so the first step is about -alpha.
        assert!((b.iter().next().unwrap().value[0] - 1.9).abs() < 1e-6);
    }
}
