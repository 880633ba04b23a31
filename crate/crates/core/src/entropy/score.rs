use rand::Rng;
use serde::{Deserialize, Serialize};

use super::posterior::PosteriorApprox;
use crate::diffcore::ParamSet;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::samplers::{hmc_step, tune_hmc_step, HmcChain, StepTuner};
use crate::tensor::Tensor;

/// Per-input estimates of `grad_x log q(x)`.
#[derive(Clone, Debug)]
pub struct ScoreEstimates {
    /// `n x D`.
    pub score: Tensor,
    /// Effective sample size per input, `1 / sum w^2`.
    pub ess: Vec<f64>,
    /// `n x k` normalized weights; each row lies on the simplex.
    pub weights: Tensor,
}

impl ScoreEstimates {
    pub fn mean_ess(&self) -> f64 {
        self.ess.iter().sum::<f64>() / self.ess.len().max(1) as f64
    }
}

/// Self-normalized importance sampling with proposal `xi(. | z0)` and the
/// given standard normal draws (`(n * k) x d`, grouped by input).
pub fn snis_score_with(
    gen: &Generator,
    post: &PosteriorApprox,
    x: &Tensor,
    z0: &Tensor,
    zeta: &Tensor,
) -> Result<ScoreEstimates> {
    let n = x.rows();
    if n == 0 || z0.rows() != n || !zeta.rows().is_multiple_of(n) || zeta.rows() == 0 {
        return Err(Error::invalid("SNIS needs k >= 1 draws for each of a nonempty batch"));
    }
    let k = zeta.rows() / n;
    let z = post.shift(&z0.repeat_rows(k), zeta);
    let xr = x.repeat_rows(k);
    let mean = gen.mean(&z)?;
    let lq = gen.cond_log_prob_from_mean(&xr, &mean);
    let lp = Generator::prior_log_prob(&z);
    let lxi = post.log_density_of_noise(zeta);
    let inv_var = (-2.0 * gen.log_sigma()).exp();

    let mut score = Tensor::zeros(n, x.cols());
    let mut weights = Tensor::zeros(n, k);
    let mut ess = Vec::with_capacity(n);
    for i in 0..n {
        let rows = i * k..(i + 1) * k;
        let logw: Vec<f64> = rows
            .clone()
            .map(|r| {
                let v = lq[r] + lp[r] - lxi[r];
                if v.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    v
                }
            })
            .collect();
        let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !mx.is_finite() {
            return Err(Error::non_finite(format!("every importance weight for input {i}")));
        }
        let w = weights.row_mut(i);
        for (wj, lw) in w.iter_mut().zip(&logw) {
            *wj = (lw - mx).exp();
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        ess.push(1.0 / w.iter().map(|v| v * v).sum::<f64>());
        let w = weights.row(i).to_vec();
        let out = score.row_mut(i);
        for (j, r) in rows.enumerate() {
            for ((o, m), xv) in out.iter_mut().zip(mean.row(r)).zip(xr.row(r)) {
                *o += w[j] * (m - xv) * inv_var;
            }
        }
    }
    Ok(ScoreEstimates { score, ess, weights })
}

/// SNIS estimate with `k` fresh draws per input.
pub fn snis_score<R: Rng + ?Sized>(
    gen: &Generator,
    post: &PosteriorApprox,
    x: &Tensor,
    z0: &Tensor,
    k: usize,
    rng: &mut R,
) -> Result<ScoreEstimates> {
    if k == 0 {
        return Err(Error::invalid("SNIS needs k >= 1"));
    }
    let zeta = Tensor::randn(x.rows() * k, post.latent(), rng);
    snis_score_with(gen, post, x, z0, &zeta)
}

/// Ascent direction on `H(q)` with respect to the generator parameters:
/// `-(1/n) sum_i (dx_i/dphi)^T s_i` with the scores held constant.
pub fn entropy_grad(gen: &Generator, z0: &Tensor, eps: &Tensor, score: &Tensor) -> Result<ParamSet> {
    let n = z0.rows();
    if score.shape() != [n, gen.dim()] {
        return Err(Error::invalid(format!(
            "one score row per sample expected ({n} x {}), got {:?}",
            gen.dim(),
            score.shape()
        )));
    }
    Ok(gen.vjp_params(z0, eps, score)?.scale(-1.0 / n.max(1) as f64))
}

/// Chain settings for the HMC score baseline: `burn_in` discarded
/// transitions, then the mean conditional score over `samples` retained
/// states. `step = None` tunes the leapfrog step on pilot chains.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmcScoreConfig {
    pub burn_in: usize,
    pub leapfrog: usize,
    pub step: Option<f64>,
    pub samples: usize,
    pub target_accept: f64,
}

impl Default for HmcScoreConfig {
    fn default() -> Self {
        Self {
            burn_in: 2,
            leapfrog: 5,
            step: None,
            samples: 1,
            target_accept: 0.65,
        }
    }
}

/// `log q(z, x)` and its gradient in `z`, one row per input.
fn joint_target<'a>(
    gen: &'a Generator,
    x: &'a Tensor,
) -> impl FnMut(&Tensor) -> Result<(Vec<f64>, Tensor)> + 'a {
    let inv_var = (-2.0 * gen.log_sigma()).exp();
    move |z: &Tensor| {
        let (mean, mut g) = gen.mean_and_vjp_z(z, |m| Ok(x.zip_map(m, |a, b| (a - b) * inv_var)))?;
        g.axpy(-1.0, z);
        let lq = gen.cond_log_prob_from_mean(x, &mean);
        let lp = Generator::prior_log_prob(z);
        Ok((lq.iter().zip(lp).map(|(a, b)| a + b).collect(), g))
    }
}

/// Tune the leapfrog step on the posterior `q(z | x)` for this batch.
pub fn tune_posterior_hmc_step<R: Rng + ?Sized>(
    gen: &Generator,
    x: &Tensor,
    z0: &Tensor,
    cfg: &HmcScoreConfig,
    iters: usize,
    rng: &mut R,
) -> Result<f64> {
    let tuner = StepTuner {
        target: cfg.target_accept,
        burn_in: iters,
        ..StepTuner::default()
    };
    tune_hmc_step(&mut joint_target(gen, x), z0, cfg.leapfrog, 0.1, &tuner, rng)
}

/// HMC estimate of the score: chains target `q(z | x)` starting from `z0`.
pub fn hmc_posterior_score<R: Rng + ?Sized>(
    gen: &Generator,
    x: &Tensor,
    z0: &Tensor,
    cfg: &HmcScoreConfig,
    rng: &mut R,
) -> Result<ScoreEstimates> {
    if cfg.samples == 0 {
        return Err(Error::invalid("HMC score needs at least one retained sample"));
    }
    let step = match cfg.step {
        Some(s) => s,
        None => tune_posterior_hmc_step(gen, x, z0, cfg, 100, rng)?,
    };
    let mut target = joint_target(gen, x);
    let mut chain = HmcChain::new(&mut target, z0.clone())?;
    let n = x.rows();
    let mut accepted = 0usize;
    let mut transitions = 0usize;
    let mut score = Tensor::zeros(n, x.cols());
    for t in 0..cfg.burn_in + cfg.samples {
        let s = hmc_step(&mut target, &mut chain, cfg.leapfrog, step, rng)?;
        accepted += s.accepted.iter().filter(|a| **a).count();
        transitions += n;
        if t >= cfg.burn_in {
            score.axpy(1.0 / cfg.samples as f64, &gen.cond_score(x, &chain.z)?);
        }
    }
    if transitions > 0 && accepted == 0 {
        return Err(Error::Sampler(format!(
            "HMC posterior chains accepted nothing in {transitions} transitions at step {step}"
        )));
    }
    Ok(ScoreEstimates {
        score,
        ess: vec![cfg.samples as f64; n],
        weights: Tensor::full(n, cfg.samples, 1.0 / cfg.samples as f64),
    })
}
