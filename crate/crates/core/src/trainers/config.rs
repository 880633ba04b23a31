use serde::{Deserialize, Serialize};

use crate::diffcore::AdamConfig;
use crate::entropy::PosteriorApprox;
use crate::error::{Error, Result};
use crate::samplers::SgldConfig;

/// Linear interpolation of the entropy weight from `lambda` at step 0 to
/// `to` at step `over`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaDecay {
    pub to: f64,
    pub over: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VeraConfig {
    pub lambda: f64,
    pub lambda_decay: Option<LambdaDecay>,
    /// Gradient-penalty weight on `||grad_x f(x)||^2` at the data.
    pub gamma: f64,
    /// Importance samples for the score estimate.
    pub k: usize,
    /// ELBO draws per generated sample when updating the posterior scale.
    pub elbo_samples: usize,
    /// Learning rates. An energy rate of 0 freezes the energy entirely.
    pub lr_energy: f64,
    pub lr_generator: f64,
    pub lr_posterior: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub eta_init: f64,
    pub per_dim_eta: bool,
    /// `|f|` on data above this aborts training.
    pub divergence_bound: f64,
}

impl Default for VeraConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_decay: None,
            gamma: 0.1,
            k: 20,
            elbo_samples: 1,
            lr_energy: 1e-4,
            lr_generator: 2e-4,
            lr_posterior: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            batch_size: 64,
            steps: 1000,
            eta_init: PosteriorApprox::DEFAULT_ETA,
            per_dim_eta: false,
            divergence_bound: 1e6,
        }
    }
}

fn check(ok: bool, key: &str, detail: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("`{key}` {detail}")))
    }
}

fn check_lr(key: &str, v: f64) -> Result<()> {
    check(v >= 0.0 && v.is_finite(), key, format_args!("must be a finite rate >= 0, got {v}"))
}

impl VeraConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda", format_args!("must be >= 0, got {}", self.lambda))?;
        if let Some(d) = self.lambda_decay {
            check(d.to >= 0.0 && d.to.is_finite(), "lambda_decay.to", format_args!("must be >= 0, got {}", d.to))?;
            check(d.over > 0, "lambda_decay.over", "must be >= 1")?;
        }
        check(self.gamma >= 0.0 && self.gamma.is_finite(), "gamma", format_args!("must be >= 0, got {}", self.gamma))?;
        check(self.k >= 1, "k", "must be >= 1")?;
        check(self.elbo_samples >= 1, "elbo_samples", "must be >= 1")?;
        check_lr("lr_energy", self.lr_energy)?;
        check_lr("lr_generator", self.lr_generator)?;
        check_lr("lr_posterior", self.lr_posterior)?;
        check((0.0..1.0).contains(&self.beta1), "beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2", "must lie in [0, 1)")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check(self.eta_init > 0.0 && self.eta_init.is_finite(), "eta_init", "must be > 0")?;
        check(self.divergence_bound > 0.0, "divergence_bound", "must be > 0")
    }

    /// Entropy weight in effect at `step`.
    pub fn lambda_at(&self, step: u64) -> f64 {
        match self.lambda_decay {
            None => self.lambda,
            Some(d) => {
                let t = (step as f64 / d.over as f64).min(1.0);
                self.lambda + (d.to - self.lambda) * t
            }
        }
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::gan(lr)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcdConfig {
    pub sgld: SgldConfig,
    pub buffer_size: usize,
    pub reinit: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Gradient penalty at the data; off for PCD by default.
    pub gamma: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub divergence_bound: f64,
}

impl Default for PcdConfig {
    fn default() -> Self {
        Self {
            sgld: SgldConfig::default(),
            buffer_size: crate::samplers::ReplayBuffer::DEFAULT_CAPACITY,
            reinit: crate::samplers::ReplayBuffer::DEFAULT_REINIT,
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            gamma: 0.0,
            batch_size: 64,
            steps: 1000,
            divergence_bound: 1e6,
        }
    }
}

impl PcdConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.sgld.step > 0.0, "sgld.step", format_args!("must be > 0, got {}", self.sgld.step))?;
        check(self.buffer_size >= 1, "buffer_size", "must be >= 1")?;
        check((0.0..=1.0).contains(&self.reinit), "reinit", "must lie in [0, 1]")?;
        check_lr("lr", self.lr)?;
        check(self.gamma >= 0.0, "gamma", "must be >= 0")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check(self.divergence_bound > 0.0, "divergence_bound", "must be > 0")
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::gan(self.lr)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 64,
            steps: 1000,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        check_lr("lr", self.lr)?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

/// Semi-supervised objective on the classifier energy:
/// `alpha * log p(y|x)` on labeled rows, `unconditional * log p(x)` on all
/// rows and `beta * H(p(y|x))` on unlabeled rows, all maximized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JemSslConfig {
    pub alpha: f64,
    /// Signed; negative values minimize the predictive entropy instead.
    pub beta: f64,
    /// Weight of the marginal-likelihood term. 0 gives a plain classifier.
    pub unconditional: f64,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub vera: VeraConfig,
}

impl Default for JemSslConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            unconditional: 1.0,
            labeled_batch: 64,
            unlabeled_batch: 64,
            vera: VeraConfig {
                lambda: 1e-4,
                ..VeraConfig::default()
            },
        }
    }
}

impl JemSslConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.alpha >= 0.0 && self.alpha.is_finite(), "alpha", format_args!("must be >= 0, got {}", self.alpha))?;
        check(self.beta.is_finite(), "beta", "must be finite")?;
        check(
            self.unconditional >= 0.0 && self.unconditional.is_finite(),
            "unconditional",
            "must be >= 0",
        )?;
        self.vera.validate()
    }
}
