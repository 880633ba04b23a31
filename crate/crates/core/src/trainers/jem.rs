use rand::Rng;

use super::config::JemSslConfig;
use super::run::Metrics;
use super::vera::{data_term_grad, mean_energy_grad, update_generator, VeraState};
use super::{ascend, check_bound, col, guard};
use crate::entropy::update_eta;
use crate::error::{Error, Result};
use crate::models::{EnergyNode, EnergySpec};
use crate::tensor::Tensor;

/// One-hot rows for `labels` over `classes`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut y = Tensor::zeros(labels.len(), classes);
    for (r, &c) in labels.iter().enumerate() {
        if c >= classes {
            return Err(Error::invalid(format!("label {c} out of range for {classes} classes")));
        }
        y.set(r, c, 1.0);
    }
    Ok(y)
}

/// One semi-supervised step on a classifier energy `f(x) = logsumexp
/// logits(x)`. The generator and posterior are updated exactly as in
/// [`super::vera_step`] against the marginal energy; with
/// `unconditional = 0` they are skipped and this is plain classifier
/// training plus the optional predictive-entropy term.
pub fn jem_ssl_step<R: Rng + ?Sized>(
    state: &mut VeraState,
    x_lab: &Tensor,
    y_lab: &[usize],
    x_unl: &Tensor,
    cfg: &JemSslConfig,
    rng: &mut R,
) -> Result<Metrics> {
    let EnergySpec::Jem { classes, .. } = *state.energy.spec() else {
        return Err(Error::Unsupported(format!(
            "semi-supervised training needs the classifier family, got {}",
            state.energy.spec().family()
        )));
    };
    if x_lab.rows() != y_lab.len() {
        return Err(Error::invalid("labeled batch and labels differ in length"));
    }
    if x_lab.rows() == 0 && cfg.alpha > 0.0 {
        return Err(Error::invalid("classification weight alpha > 0 with an empty labeled batch"));
    }
    let vc = &cfg.vera;
    let step = state.step;
    let generative = cfg.unconditional > 0.0;
    let lambda = vc.lambda_at(step);

    let mut elbo = None;
    let batch = if generative {
        let b = state.generator.sample(vc.batch_size, rng).map_err(guard(step, "generator sampling"))?;
        elbo = Some(
            update_eta(&mut state.posterior, &state.generator, &b.z0, &b.x, vc.elbo_samples, &mut state.opt_posterior, rng)
                .map_err(guard(step, "posterior update"))?,
        );
        Some(b)
    } else {
        None
    };

    // Energy objective, accumulated as an ascent direction.
    let energy = &state.energy;
    let mut g = energy.params().zeros_like();
    let mut loss = 0.0;
    let mut grad_penalty = None;
    if x_lab.rows() > 0 && cfg.alpha > 0.0 {
        let y = one_hot(y_lab, classes)?;
        let ce = energy.eval(x_lab, Some(&y), &[EnergyNode::CrossEntropy]).map_err(guard(step, "cross-entropy"))?;
        loss += cfg.alpha * ce[0].mean();
        let seed = col(x_lab.rows(), -cfg.alpha / x_lab.rows() as f64);
        g.axpy(1.0, &energy.param_grad(x_lab, Some(&y), &[(EnergyNode::CrossEntropy, &seed)])?);
    }
    if let Some(b) = &batch {
        let x_all = Tensor::vstack(&[x_lab, x_unl])?;
        let (gd, f, pen) = data_term_grad(energy, &x_all, vc.gamma).map_err(guard(step, "energy update"))?;
        check_bound(&f, vc.divergence_bound, step)?;
        let f_gen = energy.energy(&b.x).map_err(guard(step, "energy update"))?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        loss -= cfg.unconditional * (mean(&f) - mean(&f_gen) - vc.gamma * pen);
        g.axpy(cfg.unconditional, &gd);
        g.axpy(-cfg.unconditional, &mean_energy_grad(energy, &b.x)?);
        grad_penalty = Some(vc.gamma * pen);
    }
    if cfg.beta != 0.0 && x_unl.rows() > 0 {
        let h = energy.eval(x_unl, None, &[EnergyNode::PredEntropy]).map_err(guard(step, "predictive entropy"))?;
        loss -= cfg.beta * h[0].mean();
        let seed = col(x_unl.rows(), cfg.beta / x_unl.rows() as f64);
        g.axpy(1.0, &energy.param_grad(x_unl, None, &[(EnergyNode::PredEntropy, &seed)])?);
    }
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: "non-finite semi-supervised loss".into(),
        });
    }
    let grad_norm_ebm = g.norm();
    ascend(&mut state.opt_energy, state.energy.params_mut(), &g)?;

    let mut gu = None;
    if let Some(b) = &batch {
        gu = Some(
            update_generator(
                &mut state.generator,
                &mut state.opt_generator,
                &state.energy,
                &state.posterior,
                b,
                lambda,
                vc.k,
                rng,
            )
            .map_err(guard(step, "generator update"))?,
        );
    }
    state.step += 1;
    let eta = state.posterior.eta();
    Ok(Metrics {
        step: state.step,
        loss_ebm: loss,
        loss_gen: gu.as_ref().map(|u| u.loss),
        elbo,
        eta: generative.then(|| eta.iter().sum::<f64>() / eta.len() as f64),
        ess_mean: gu.as_ref().and_then(|u| u.ess_mean),
        grad_penalty,
        lambda: generative.then_some(lambda),
        grad_norm_ebm: Some(grad_norm_ebm),
        grad_norm_gen: gu.as_ref().map(|u| u.grad_norm),
        ..Metrics::default()
    })
}
