use rand::Rng;

use super::config::PcdConfig;
use super::run::Metrics;
use super::vera::{data_term_grad, mean_energy_grad};
use super::{ascend, check_bound, guard};
use crate::diffcore::{AdamState, ParamSet};
use crate::error::{Error, Result};
use crate::models::EnergyModel;
use crate::samplers::{sgld_chain, ReplayBuffer};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PcdState {
    pub energy: EnergyModel,
    pub buffer: ReplayBuffer,
    pub opt: AdamState,
    pub step: u64,
}

impl PcdState {
    /// The buffer reinitializes uniformly over the padded bounding box of
    /// `data`.
    pub fn new<R: Rng + ?Sized>(energy: EnergyModel, data: &Tensor, cfg: &PcdConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let buffer = ReplayBuffer::from_data(data, cfg.buffer_size, cfg.reinit, rng)?;
        Ok(Self {
            energy,
            buffer,
            opt: AdamState::new(cfg.adam()),
            step: 0,
        })
    }
}

/// Ascent direction `grad mean f(x) - grad mean f(samples)`, minus the
/// penalty gradient when `gamma > 0`, and `f` at the data.
pub fn pcd_gradient(energy: &EnergyModel, x: &Tensor, samples: &Tensor, gamma: f64) -> Result<(ParamSet, Vec<f64>, f64)> {
    let (mut g, f, pen) = data_term_grad(energy, x, gamma)?;
    g.axpy(-1.0, &mean_energy_grad(energy, samples)?);
    Ok((g, f, pen))
}

/// One PCD iteration: refresh a buffer batch with SGLD, store it back and
/// take an ascent step on the contrastive objective.
pub fn pcd_step<R: Rng + ?Sized>(state: &mut PcdState, x: &Tensor, cfg: &PcdConfig, rng: &mut R) -> Result<Metrics> {
    let step = state.step;
    let draw = state.buffer.draw(cfg.batch_size, rng);
    let samples = sgld_chain(&state.energy, &draw.x, &cfg.sgld, rng).map_err(|e| match e {
        Error::Sampler(m) => Error::Divergence {
            step,
            detail: format!("sampler: {m}"),
        },
        e => guard(step, "sampling")(e),
    })?;
    state.buffer.store(&draw.idx, &samples);

    let (g, f_data, pen) =
        pcd_gradient(&state.energy, x, &samples, cfg.gamma).map_err(guard(step, "energy gradient"))?;
    check_bound(&f_data, cfg.divergence_bound, step)?;
    let f_s = state.energy.energy(&samples).map_err(guard(step, "sample energy"))?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let loss = -(mean(&f_data) - mean(&f_s) - cfg.gamma * pen);
    let grad_norm = g.norm();
    if !loss.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: "non-finite PCD loss".into(),
        });
    }
    ascend(&mut state.opt, state.energy.params_mut(), &g)?;
    state.step += 1;
    Ok(Metrics {
        step: state.step,
        loss_ebm: loss,
        grad_penalty: (cfg.gamma > 0.0).then_some(cfg.gamma * pen),
        grad_norm_ebm: Some(grad_norm),
        ..Metrics::default()
    })
}
