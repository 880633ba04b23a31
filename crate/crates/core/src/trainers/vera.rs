use rand::Rng;

use super::config::VeraConfig;
use super::run::Metrics;
use super::{ascend, check_bound, col, guard};
use crate::diffcore::{AdamState, ParamSet};
use crate::entropy::{entropy_grad, snis_score, update_eta, PosteriorApprox};
use crate::error::{Error, Result};
use crate::generator::{GenBatch, Generator};
use crate::models::{EnergyModel, EnergyNode};
use crate::tensor::Tensor;

/// Everything a VERA run mutates. Each component has its own optimizer.
#[derive(Clone, Debug)]
pub struct VeraState {
    pub energy: EnergyModel,
    pub generator: Generator,
    pub posterior: PosteriorApprox,
    pub opt_energy: AdamState,
    pub opt_generator: AdamState,
    pub opt_posterior: AdamState,
    /// Completed steps.
    pub step: u64,
}

impl VeraState {
    pub fn new(energy: EnergyModel, generator: Generator, cfg: &VeraConfig) -> Result<Self> {
        cfg.validate()?;
        if energy.dim() != generator.dim() {
            return Err(Error::invalid(format!(
                "energy dimension {} differs from generator dimension {}",
                energy.dim(),
                generator.dim()
            )));
        }
        let posterior = if cfg.per_dim_eta {
            PosteriorApprox::per_dim(generator.latent(), cfg.eta_init)?
        } else {
            PosteriorApprox::shared(generator.latent(), cfg.eta_init)?
        };
        Ok(Self {
            energy,
            generator,
            posterior,
            opt_energy: AdamState::new(cfg.adam(cfg.lr_energy)),
            opt_generator: AdamState::new(cfg.adam(cfg.lr_generator)),
            opt_posterior: AdamState::new(cfg.adam(cfg.lr_posterior)),
            step: 0,
        })
    }
}

/// Gradient of `mean f(x) - gamma * mean ||grad_x f(x)||^2` together with
/// `f(x)` per row and the mean squared gradient norm.
pub fn data_term_grad(energy: &EnergyModel, x: &Tensor, gamma: f64) -> Result<(ParamSet, Vec<f64>, f64)> {
    let n = x.rows() as f64;
    let v = energy.eval(x, None, &[EnergyNode::F, EnergyNode::Pen])?;
    let f = v[0].data().to_vec();
    let pen = v[1].mean();
    let mut seeds = vec![(EnergyNode::F, col(x.rows(), 1.0 / n))];
    if gamma > 0.0 {
        seeds.push((EnergyNode::Pen, col(x.rows(), -gamma / n)));
    }
    let seeds: Vec<(EnergyNode, &Tensor)> = seeds.iter().map(|(w, t)| (*w, t)).collect();
    Ok((energy.param_grad(x, None, &seeds)?, f, pen))
}

/// Gradient of `mean f(x)` in the energy parameters.
pub fn mean_energy_grad(energy: &EnergyModel, x: &Tensor) -> Result<ParamSet> {
    let seed = col(x.rows(), 1.0 / x.rows() as f64);
    energy.param_grad(x, None, &[(EnergyNode::F, &seed)])
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyUpdate {
    /// Negated objective `-(mean f(x) - mean f(x_g) - gamma * pen)`.
    pub loss: f64,
    pub grad_penalty: f64,
    pub grad_norm: f64,
}

/// Ascent on `mean f(x) - mean f(x_g) - gamma * mean ||grad_x f(x)||^2`.
/// With a zero learning rate the energy is left untouched.
pub fn update_energy(
    energy: &mut EnergyModel,
    opt: &mut AdamState,
    x: &Tensor,
    x_gen: &Tensor,
    gamma: f64,
    bound: f64,
    step: u64,
) -> Result<EnergyUpdate> {
    let (mut g, f_data, pen) = data_term_grad(energy, x, gamma)?;
    check_bound(&f_data, bound, step)?;
    let f_gen = energy.energy(x_gen)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let loss = -(mean(&f_data) - mean(&f_gen) - gamma * pen);
    if !loss.is_finite() {
        return Err(Error::non_finite("energy loss"));
    }
    g.axpy(-1.0, &mean_energy_grad(energy, x_gen)?);
    let grad_norm = g.norm();
    if opt.config.lr > 0.0 {
        ascend(opt, energy.params_mut(), &g)?;
    }
    Ok(EnergyUpdate {
        loss,
        grad_penalty: gamma * pen,
        grad_norm,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorUpdate {
    /// `-mean f(x_g)`.
    pub loss: f64,
    /// `None` when the entropy term is off.
    pub ess_mean: Option<f64>,
    pub grad_norm: f64,
}

/// Ascent on `mean f(x_g) + lambda * H(q)` in the generator parameters, with
/// the energy held fixed. `lambda = 0` never touches the score estimator.
#[allow(clippy::too_many_arguments)]
pub fn update_generator<R: Rng + ?Sized>(
    generator: &mut Generator,
    opt: &mut AdamState,
    energy: &EnergyModel,
    posterior: &PosteriorApprox,
    batch: &GenBatch,
    lambda: f64,
    k: usize,
    rng: &mut R,
) -> Result<GeneratorUpdate> {
    let n = batch.len() as f64;
    let (f, gx) = energy.energy_and_grad(&batch.x)?;
    let loss = -f.iter().sum::<f64>() / n;
    let mut g = generator.vjp_params(&batch.z0, &batch.eps, &gx)?.scale(1.0 / n);
    let mut ess_mean = None;
    if lambda > 0.0 {
        let est = snis_score(generator, posterior, &batch.x, &batch.z0, k, rng)?;
        g.axpy(lambda, &entropy_grad(generator, &batch.z0, &batch.eps, &est.score)?);
        ess_mean = Some(est.mean_ess());
    }
    let grad_norm = g.norm();
    if !grad_norm.is_finite() {
        return Err(Error::non_finite("generator gradient"));
    }
    ascend(opt, generator.params_mut(), &g)?;
    generator.clamp_sigma();
    Ok(GeneratorUpdate {
        loss,
        ess_mean,
        grad_norm,
    })
}

/// One VERA iteration on the data batch `x`: draw from the generator, fit
/// the posterior scale, update the energy, then update the generator.
pub fn vera_step<R: Rng + ?Sized>(
    state: &mut VeraState,
    x: &Tensor,
    cfg: &VeraConfig,
    rng: &mut R,
) -> Result<Metrics> {
    let step = state.step;
    let lambda = cfg.lambda_at(step);
    let batch = state.generator.sample(cfg.batch_size, rng).map_err(guard(step, "generator sampling"))?;

    let elbo = update_eta(
        &mut state.posterior,
        &state.generator,
        &batch.z0,
        &batch.x,
        cfg.elbo_samples,
        &mut state.opt_posterior,
        rng,
    )
    .map_err(guard(step, "posterior update"))?;

    let eu = update_energy(
        &mut state.energy,
        &mut state.opt_energy,
        x,
        &batch.x,
        cfg.gamma,
        cfg.divergence_bound,
        step,
    )
    .map_err(guard(step, "energy update"))?;

    let gu = update_generator(
        &mut state.generator,
        &mut state.opt_generator,
        &state.energy,
        &state.posterior,
        &batch,
        lambda,
        cfg.k,
        rng,
    )
    .map_err(guard(step, "generator update"))?;

    state.step += 1;
    let eta = state.posterior.eta();
    Ok(Metrics {
        step: state.step,
        loss_ebm: eu.loss,
        loss_gen: Some(gu.loss),
        elbo: Some(elbo),
        eta: Some(eta.iter().sum::<f64>() / eta.len() as f64),
        ess_mean: gu.ess_mean,
        grad_penalty: Some(eu.grad_penalty),
        lambda: Some(lambda),
        grad_norm_ebm: Some(eu.grad_norm),
        grad_norm_gen: Some(gu.grad_norm),
        ..Metrics::default()
    })
}
