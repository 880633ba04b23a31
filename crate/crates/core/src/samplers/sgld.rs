use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::EnergyModel;
use crate::tensor::Tensor;

/// `x <- x + (step^2 / 2) grad f(x) + step * eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgldConfig {
    pub step: f64,
    pub steps: usize,
    /// Disable the Gaussian term (plain gradient ascent), for diagnostics.
    pub noise: bool,
}

impl Default for SgldConfig {
    fn default() -> Self {
        Self {
            step: 0.01,
            steps: 20,
            noise: true,
        }
    }
}

/// Run SGLD from `x0` with an arbitrary input-gradient function.
pub fn sgld_with<R, G>(mut grad: G, x0: &Tensor, cfg: &SgldConfig, rng: &mut R) -> Result<Tensor>
where
    R: Rng + ?Sized,
    G: FnMut(&Tensor) -> Result<Tensor>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::invalid(format!("SGLD step must be > 0, got {}", cfg.step)));
    }
    let drift = 0.5 * cfg.step * cfg.step;
    let mut x = x0.clone();
    for t in 0..cfg.steps {
        let g = grad(&x).map_err(|e| Error::Sampler(format!("SGLD step {t}: {e}")))?;
        x.axpy(drift, &g);
        if cfg.noise {
            let e = Tensor::randn(x.rows(), x.cols(), rng);
            x.axpy(cfg.step, &e);
        }
        if !x.is_finite() {
            return Err(Error::Sampler(format!("SGLD state became non-finite at step {t}")));
        }
    }
    Ok(x)
}

pub fn sgld_chain<R: Rng + ?Sized>(
    energy: &EnergyModel,
    x0: &Tensor,
    cfg: &SgldConfig,
    rng: &mut R,
) -> Result<Tensor> {
    sgld_with(|x| energy.grad_x(x), x0, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_zero_gradient_is_fixed_point() {
        let x0 = Tensor::randn(4, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let cfg = SgldConfig {
            step: 0.3,
            steps: 10,
            noise: false,
        };
        let x = sgld_with(|x| Ok(Tensor::zeros(x.rows(), x.cols())), &x0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn flat_energy_is_a_random_walk() {
        let n = 10_000;
        let cfg = SgldConfig {
            step: 0.2,
            steps: 25,
            noise: true,
        };
        let x0 = Tensor::zeros(n, 1);
        let x = sgld_with(|x| Ok(Tensor::zeros(x.rows(), 1)), &x0, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let var = x.norm_sq() / n as f64;
        let expect = 25.0 * 0.04;
        assert!((var - expect).abs() < 0.05 * expect, "{var}");
    }

    #[test]
    fn quadratic_stationary_variance() {
        // With f = -x^2/2 the chain is AR(1): x' = a x + step * e, a = 1 - step^2/2,
        // so its stationary variance is step^2 / (1 - a^2).
        let q = EnergyModel::quadratic(&[0.0], 1.0).unwrap();
        let cfg = SgldConfig {
            step: 0.1,
            steps: 5000,
            noise: true,
        };
        let x0 = Tensor::zeros(1000, 1);
        let x = sgld_chain(&q, &x0, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let a = 1.0 - 0.005;
        let oracle = 0.01 / (1.0 - a * a);
        let var = x.norm_sq() / 1000.0;
        assert!((var - oracle).abs() < 0.15 * oracle, "{var} vs {oracle}");
    }

    #[test]
    fn divergence_reports_step() {
        let cfg = SgldConfig {
            step: 1.0,
            steps: 5000,
            noise: false,
        };
        let err = sgld_with(|x| Ok(x.scale(1e3)), &Tensor::ones(1, 1), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("step"), "{err}");
    }
}
