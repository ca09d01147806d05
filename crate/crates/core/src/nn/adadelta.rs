//! AdaDelta with the standard defaults (ρ = 0.9, ε = 1e-6, lr = 1.0).
//!
//! Per parameter element, with g the gradient:
//!   E[g²] ← ρ·E[g²] + (1−ρ)·g²
//!   Δx   = −(√(E[Δx²] + ε) / √(E[g²] + ε)) · g
//!   E[Δx²] ← ρ·E[Δx²] + (1−ρ)·Δx²
//!   x    ← x + lr·Δx
//!
//! The two accumulators per parameter are part of the training state and are
//! serialized into checkpoints so a resumed run is bit-identical to an
//! uninterrupted one.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::nn::param::Param;

#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaSlot {
    pub acc_grad: ArrayD<f64>,
    pub acc_update: ArrayD<f64>,
}

#[derive(Debug, Clone)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    state: BTreeMap<String, AdaDeltaSlot>,
}

impl Default for AdaDelta {
    fn default() -> Self {
        AdaDelta::new(0.9, 1e-6, 1.0)
    }
}

impl AdaDelta {
    pub fn new(rho: f64, eps: f64, lr: f64) -> Self {
        AdaDelta {
            rho,
            eps,
            lr,
            state: BTreeMap::new(),
        }
    }

    /// Applies one update to a single parameter, creating its accumulator
    /// slot on first sight. Call once per parameter per step, then
    /// `zero_grad` the model.
    pub fn update(&mut self, name: &str, param: &mut Param) {
        let slot = self.state.entry(name.to_string()).or_insert_with(|| AdaDeltaSlot {
            acc_grad: ArrayD::zeros(param.value.raw_dim()),
            acc_update: ArrayD::zeros(param.value.raw_dim()),
        });
        debug_assert_eq!(slot.acc_grad.shape(), param.value.shape());
        let rho = self.rho;
        let eps = self.eps;
        let lr = self.lr;
        ndarray::Zip::from(&mut param.value)
            .and(&param.grad)
            .and(&mut slot.acc_grad)
            .and(&mut slot.acc_update)
            .for_each(|v, &g, eg, eu| {
                *eg = rho * *eg + (1.0 - rho) * g * g;
                let dx = -((*eu + eps).sqrt() / (*eg + eps).sqrt()) * g;
                *eu = rho * *eu + (1.0 - rho) * dx * dx;
                *v += lr * dx;
            });
    }

    pub fn state(&self) -> &BTreeMap<String, AdaDeltaSlot> {
        &self.state
    }

    /// Restores accumulator state from a checkpoint.
    pub fn set_state(&mut self, state: BTreeMap<String, AdaDeltaSlot>) -> Result<()> {
        for (name, slot) in &state {
            if slot.acc_grad.shape() != slot.acc_update.shape() {
                return Err(Error::Checkpoint(format!(
                    "optimizer slot {name} has mismatched accumulator shapes"
                )));
            }
        }
        self.state = state;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_matches_hand_computed_update() {
        let mut opt = AdaDelta::default();
        let mut p = Param::zeros(&[1]);
        p.value[[0]] = 1.0;
        p.grad[[0]] = 2.0;
        opt.update("p", &mut p);
        // E[g²] = 0.1·4 = 0.4; Δx = −√(1e-6)/√(0.4 + 1e-6) · 2
        let eg: f64 = 0.4;
        let dx = -((1e-6f64).sqrt() / (eg + 1e-6).sqrt()) * 2.0;
        assert!((p.value[[0]] - (1.0 + dx)).abs() < 1e-15);
        let slot = &opt.state()["p"];
        assert!((slot.acc_grad[[0]] - eg).abs() < 1e-15);
        assert!((slot.acc_update[[0]] - 0.1 * dx * dx).abs() < 1e-18);
    }

    #[test]
    fn descends_a_quadratic() {
        // Minimize f(x) = (x − 3)², starting at 0.
        let mut opt = AdaDelta::default();
        let mut p = Param::zeros(&[1]);
        for _ in 0..2000 {
            p.grad[[0]] = 2.0 * (p.value[[0]] - 3.0);
            opt.update("x", &mut p);
            p.zero_grad();
        }
        assert!(
            (p.value[[0]] - 3.0).abs() < 0.05,
            "converged to {}",
            p.value[[0]]
        );
    }

    #[test]
    fn state_round_trip_is_exact() {
        let mut opt = AdaDelta::default();
        let mut p = Param::zeros(&[3]);
        for step in 0..5 {
            for i in 0..3 {
                p.grad[[i]] = (step + i) as f64 * 0.1 - 0.2;
            }
            opt.update("w", &mut p);
            p.zero_grad();
        }
        let saved = opt.state().clone();
        let mut fresh = AdaDelta::default();
        fresh.set_state(saved).unwrap();
        // One more identical step on both must produce identical values.
        let mut p2 = p.clone();
        p.grad.fill(0.3);
        p2.grad.fill(0.3);
        opt.update("w", &mut p);
        fresh.update("w", &mut p2);
        assert_eq!(p.value, p2.value);

        let bad = BTreeMap::from([(
            "w".to_string(),
            AdaDeltaSlot {
                acc_grad: ArrayD::zeros(IxDyn(&[2])),
                acc_update: ArrayD::zeros(IxDyn(&[3])),
            },
        )]);
        assert!(AdaDelta::default().set_state(bad).is_err());
    }
}
