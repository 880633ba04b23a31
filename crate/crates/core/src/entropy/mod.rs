//! Generator entropy gradients: the variational posterior over latents,
//! its ELBO, importance-sampled and HMC score estimators, and the bias
//! benchmark against a linear generator's closed-form score.

mod bias;
mod posterior;
mod score;

pub use bias::{score_bias_benchmark, write_bias_csv, BiasReport, EstimatorSpec};
pub use posterior::{elbo, elbo_with, fit_posterior, update_eta, PosteriorApprox, LOG_ETA};
pub use score::{
    entropy_grad, hmc_posterior_score, snis_score, snis_score_with, tune_posterior_hmc_step,
    HmcScoreConfig, ScoreEstimates,
};
