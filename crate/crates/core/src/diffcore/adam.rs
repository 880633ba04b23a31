use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// `beta1 = 0`, `beta2 = 0.9`, `eps = 1e-8`.
    pub fn gan(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one group of parameters. Updates descend; pass
/// negated gradients to ascend.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    /// One bias-corrected Adam step on every parameter named in `grads`.
    /// Nothing is modified when an error is returned.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {lr}")));
        }
        for (name, g) in grads.iter() {
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(Error::invalid(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::non_finite(format!("gradient of `{name}`")));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads.iter() {
            let mut m = self
                .m
                .remove(name)
                .unwrap_or_else(|| Tensor::zeros(g.rows(), g.cols()));
            let mut v = self
                .v
                .remove(name)
                .unwrap_or_else(|| Tensor::zeros(g.rows(), g.cols()));
            for ((mi, vi), gi) in m.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
            let p = params.get_mut(name).expect("checked above");
            for ((pi, mi), vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            self.m.insert(name.clone(), m);
            self.v.insert(name.clone(), v);
        }
        Ok(())
    }

    /// Drop accumulators so the next step starts from `t = 0`.
    pub fn reset(&mut self) {
        self.t = 0;
        self.m = ParamSet::new();
        self.v = ParamSet::new();
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_update(
    params: &ParamSet,
    grads: &ParamSet,
    state: &AdamState,
) -> Result<(ParamSet, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let p = one("w", 1.5);
        let (p2, s) = adam_update(&p, &one("w", 0.0), &AdamState::new(AdamConfig::gan(0.1))).unwrap();
        assert_eq!(p2, p);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_hand_evaluation() {
        let (p, s) = adam_update(&one("w", 0.0), &one("w", 1.0), &AdamState::new(AdamConfig::gan(0.1))).unwrap();
        let v = s.v.get("w").unwrap().item();
        assert!((v - 0.1).abs() < 1e-15);
        // v_hat = 0.1 / (1 - 0.9) = 1, so the step is lr / (1 + eps).
        let delta = p.get("w").unwrap().item();
        assert!((delta + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_keeps_step_size() {
        let mut s = AdamState::new(AdamConfig::gan(0.1));
        let mut p = one("w", 0.0);
        s.step(&mut p, &one("w", 1.0)).unwrap();
        let d1 = p.get("w").unwrap().item();
        s.step(&mut p, &one("w", 1.0)).unwrap();
        let d2 = p.get("w").unwrap().item() - d1;
        assert!((d1 - d2).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = AdamState::new(AdamConfig::gan(0.1));
        let mut p = one("enc.0.weight", 0.0);
        let err = s.step(&mut p, &one("enc.0.weight", f64::NAN)).unwrap_err();
        assert!(err.to_string().contains("enc.0.weight"));
        assert_eq!(s.t, 0);
        assert_eq!(p.get("enc.0.weight").unwrap().item(), 0.0);
    }
}
