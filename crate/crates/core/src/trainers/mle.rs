use super::run::Metrics;
use super::vera::mean_energy_grad;
use super::{ascend, guard};
use crate::diffcore::AdamState;
use crate::error::{Error, Result};
use crate::models::EnergyModel;
use crate::tensor::Tensor;

/// Ascent on the batch-mean exact log-likelihood of a normalized family.
pub fn mle_step(model: &mut EnergyModel, opt: &mut AdamState, x: &Tensor, step: u64) -> Result<Metrics> {
    if !model.spec().is_normalized() {
        return Err(Error::Unsupported(format!(
            "maximum likelihood needs an exact density, not the {} family",
            model.spec().family()
        )));
    }
    let ll = model.log_prob(x).map_err(guard(step, "log-likelihood"))?;
    let g = mean_energy_grad(model, x).map_err(guard(step, "likelihood gradient"))?;
    let grad_norm = g.norm();
    ascend(opt, model.params_mut(), &g)?;
    Ok(Metrics {
        step: step + 1,
        loss_ebm: -ll.iter().sum::<f64>() / ll.len() as f64,
        grad_norm_ebm: Some(grad_norm),
        ..Metrics::default()
    })
}
