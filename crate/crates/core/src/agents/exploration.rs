//! Exploration schedules and noisy action selection.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `epsilon(epoch) = max(floor, epsilon0 * decay_rate^epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSchedule {
    pub epsilon0: f64,
    pub decay_rate: f64,
    pub floor: f64,
}

impl ExplorationSchedule {
    /// Gaussian standard deviation for the policy-gradient agent.
    pub fn pg_default() -> Self {
        Self {
            epsilon0: 0.2,
            decay_rate: 0.95,
            floor: 0.05,
        }
    }

    /// Uniform noise scale for the actor-critic agent.
    pub fn ac_default() -> Self {
        Self {
            epsilon0: 0.4,
            decay_rate: 0.95,
            floor: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon0 >= 0.0 && (0.0..=1.0).contains(&self.decay_rate) && self.floor >= 0.0 && self.floor <= self.epsilon0;
        if !ok {
            return Err(Error::Config(format!("invalid exploration schedule {self:?}")));
        }
        Ok(())
    }

    pub fn epsilon(&self, epoch: usize) -> f64 {
        let decayed = self.epsilon0 * self.decay_rate.powi(epoch.min(i32::MAX as usize) as i32);
        decayed.max(self.floor)
    }
}

fn clip(a: f64) -> f64 {
    a.clamp(-1.0, 1.0)
}

/// Gaussian exploration: returns the unclipped sample and the executed action.
pub fn gaussian_action<R: Rng + ?Sized>(mu: f64, epsilon: f64, rng: &mut R) -> (f64, f64) {
    if epsilon == 0.0 {
        return (mu, clip(mu));
    }
    let z: f64 = StandardNormal.sample(rng);
    let raw = mu + epsilon * z;
    (raw, clip(raw))
}

/// Uniform exploration `clip(mu + epsilon * W)` with `W ~ U[-1, 1)`.
pub fn uniform_action<R: Rng + ?Sized>(mu: f64, epsilon: f64, rng: &mut R) -> f64 {
    if epsilon == 0.0 {
        return clip(mu);
    }
    let w: f64 = rng.random_range(-1.0..1.0);
    clip(mu + epsilon * w)
}

/// Log density of `N(mu, epsilon^2)` at `a`.
pub fn gaussian_log_density(a: f64, mu: f64, epsilon: f64) -> f64 {
    let z = (a - mu) / epsilon;
    -0.5 * z * z - epsilon.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn schedule_decays_to_floor() {
        let s = ExplorationSchedule::pg_default();
        assert_eq!(s.epsilon(0), 0.2);
        assert!((s.epsilon(1) - 0.19).abs() < 1e-15);
        assert_eq!(s.epsilon(500), 0.05);
        let mut prev = f64::INFINITY;
        for e in 0..200 {
            assert!(s.epsilon(e) <= prev);
            prev = s.epsilon(e);
        }
    }

    #[test]
    fn zero_epsilon_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(gaussian_action(0.3, 0.0, &mut rng), (0.3, 0.3));
        assert_eq!(uniform_action(-0.7, 0.0, &mut rng), -0.7);
    }

    #[test]
    fn gaussian_clip_frequency_matches_tail_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mu, eps, draws) = (0.9, 1.0, 10_000);
        let hits = (0..draws).filter(|_| gaussian_action(mu, eps, &mut rng).1 == 1.0).count();
        let p = 1.0 - Normal::new(mu, eps).unwrap().cdf(1.0);
        let expected = p * draws as f64;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        assert!((hits as f64 - expected).abs() < 3.0 * sd, "{hits} vs {expected}");
    }

    #[test]
    fn uniform_noise_passes_ks_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut xs: Vec<f64> = (0..10_000).map(|_| uniform_action(0.0, 1.0, &mut rng)).collect();
        assert!(xs.iter().all(|x| (-1.0..=1.0).contains(x)));
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = (x + 1.0) / 2.0;
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // Asymptotic critical value at alpha = 0.01.
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn actions_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (_, a) = gaussian_action(0.99, 5.0, &mut rng);
            assert!((-1.0..=1.0).contains(&a));
            assert!((-1.0..=1.0).contains(&uniform_action(-0.99, 3.0, &mut rng)));
        }
    }

    #[test]
    fn log_density_matches_statrs() {
        use statrs::distribution::Continuous;
        let d = Normal::new(0.1, 0.3).unwrap();
        assert!((gaussian_log_density(0.5, 0.1, 0.3) - d.ln_pdf(0.5)).abs() < 1e-12);
    }
}
