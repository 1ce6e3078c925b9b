//! Cross-entropy and KL objectives, and the imitation-parameter schedules.
//!
//! `L = α(t)·L1 + β(t)·L2 + L3` where `L1` and `L2` are the cross-entropies
//! of the embedding and path models against the normalized train labels, and
//! `L3 = Σ_u KL(z'_u ‖ z_u)` couples the two. `L3` is differentiated w.r.t.
//! both distributions.

use serde::{Deserialize, Serialize};

use crate::split::LabelVector;
use crate::{Error, Result};

/// Added inside `log z'` only: walk-model outputs can be exactly zero.
pub const LOG_EPS: f64 = 1e-12;

/// `-Σ_i x̃_i log(dist_i + eps)`; zero for an empty label.
pub fn cross_entropy(dist: &[f64], label: &LabelVector, eps: f64) -> f64 {
    let w = label.weight();
    label.items.iter().map(|&i| -w * (dist[i] + eps).ln()).sum()
}

/// Adds `scale · ∂/∂dist` of [`cross_entropy`] into `grad`.
pub fn cross_entropy_grad(dist: &[f64], label: &LabelVector, eps: f64, scale: f64, grad: &mut [f64]) {
    let w = label.weight();
    for &i in &label.items {
        grad[i] -= scale * w / (dist[i] + eps);
    }
}

/// Cross-entropy of the embedding model's `z_u`.
pub fn loss_l1(z: &[f64], label: &LabelVector) -> f64 {
    cross_entropy(z, label, 0.0)
}

/// Cross-entropy of the walk model's `z'_u`.
pub fn loss_l2(z_prime: &[f64], label: &LabelVector) -> f64 {
    cross_entropy(z_prime, label, LOG_EPS)
}

/// `KL(z' ‖ z)` with `0 · log 0 = 0`.
pub fn loss_l3(z_prime: &[f64], z: &[f64]) -> f64 {
    z_prime
        .iter()
        .zip(z)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &q)| p * (p.ln() - q.ln()))
        .sum()
}

/// Adds `scale ·` the gradients of [`loss_l3`] w.r.t. both arguments.
pub fn loss_l3_grad(z_prime: &[f64], z: &[f64], scale: f64, grad_z_prime: &mut [f64], grad_z: &mut [f64]) {
    for i in 0..z.len() {
        let p = z_prime[i];
        let log_q = z[i].ln();
        // Entries with p = 0 are structurally unreachable; their gradient never
        // reaches a parameter, so the regularized slope is only a placeholder.
        let log_p = if p > 0.0 { p.ln() } else { LOG_EPS.ln() };
        grad_z_prime[i] += scale * (log_p + 1.0 - log_q);
        grad_z[i] -= scale * p / z[i];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ImitationSchedule {
    /// `eta0` for `t < t0`, then `eta1`.
    Step { eta0: f64, eta1: f64, t0: usize },
    /// `max(eta0 · lambda^t, eta1)`.
    Decay { eta0: f64, eta1: f64, lambda: f64 },
}

impl ImitationSchedule {
    pub fn step(eta0: f64, eta1: f64, t0: usize) -> Self {
        ImitationSchedule::Step { eta0, eta1, t0 }
    }

    pub fn decay(eta0: f64, eta1: f64, lambda: f64) -> Self {
        ImitationSchedule::Decay { eta0, eta1, lambda }
    }

    /// Constant `eta` forever.
    pub fn constant(eta: f64) -> Self {
        ImitationSchedule::Step {
            eta0: eta,
            eta1: eta,
            t0: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (eta0, eta1) = match *self {
            ImitationSchedule::Step { eta0, eta1, .. } => (eta0, eta1),
            ImitationSchedule::Decay { eta0, eta1, lambda } => {
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(Error::Config(format!("decay factor must be in (0, 1), got {lambda}")));
                }
                (eta0, eta1)
            }
        };
        if !(eta1 > 0.0 && eta0 >= eta1 && eta0.is_finite()) {
            return Err(Error::Config(format!(
                "imitation schedule needs eta0 >= eta1 > 0, got eta0={eta0}, eta1={eta1}"
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: usize) -> f64 {
        match *self {
            ImitationSchedule::Step { eta0, eta1, t0 } => {
                if t < t0 {
                    eta0
                } else {
                    eta1
                }
            }
            ImitationSchedule::Decay { eta0, eta1, lambda } => {
                let exp = i32::try_from(t).unwrap_or(i32::MAX);
                (eta0 * lambda.powi(exp)).max(eta1)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(items: &[usize]) -> LabelVector {
        LabelVector {
            user: 0,
            items: items.to_vec(),
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let ln2 = 2f64.ln();
        assert!((loss_l1(&[0.25; 4], &label(&[2])) - 4f64.ln()).abs() < 1e-15);
        assert!((loss_l1(&[0.5, 0.5], &label(&[0, 1])) - ln2).abs() < 1e-15);
        let near_one = [1.0 - 1e-9, 1e-9];
        let l = loss_l1(&near_one, &label(&[0]));
        assert!(l > 0.0 && l < 1e-8);
        assert_eq!(loss_l1(&[0.5, 0.5], &label(&[])), 0.0);
    }

    #[test]
    fn l2_tolerates_zero_mass() {
        assert!((loss_l2(&[0.25; 4], &label(&[2])) - 4f64.ln()).abs() < 1e-9);
        assert!((loss_l2(&[0.5, 0.5], &label(&[0, 1])) - 2f64.ln()).abs() < 1e-9);
        let l = loss_l2(&[1.0, 0.0], &label(&[1]));
        assert!(l.is_finite() && (l + LOG_EPS.ln()).abs() < 1e-9);
    }

    #[test]
    fn kl_examples() {
        let z = [0.2, 0.3, 0.5];
        assert_eq!(loss_l3(&z, &z), 0.0);
        assert!((loss_l3(&[1.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn step_schedule() {
        let s = ImitationSchedule::step(1.0, 0.1, 5);
        assert_eq!(s.value(4), 1.0);
        assert_eq!(s.value(5), 0.1);
        assert_eq!(s.value(6), 0.1);
    }

    #[test]
    fn decay_schedule() {
        let s = ImitationSchedule::decay(1.0, 0.1, 0.5);
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(2), 0.25);
        assert_eq!(s.value(10), 0.1);
    }

    #[test]
    fn schedule_validation() {
        assert!(ImitationSchedule::step(0.1, 1.0, 3).validate().is_err());
        assert!(ImitationSchedule::decay(1.0, 0.1, 1.0).validate().is_err());
        assert!(ImitationSchedule::step(1.0, 0.0, 3).validate().is_err());
        assert!(ImitationSchedule::decay(1.0, 0.1, 0.9).validate().is_ok());
    }
}
