//! Training loops: VERA, persistent contrastive divergence, exact maximum
//! likelihood and semi-supervised training of a classifier energy.
//!
//! Every step function consumes randomness only from the generator it is
//! handed, so a run is a pure function of its seed, config and data.

mod config;
mod eval;
mod jem;
mod mle;
mod pcd;
mod run;
mod vera;

pub use config::{JemSslConfig, LambdaDecay, MleConfig, PcdConfig, VeraConfig};
pub use eval::{default_eval_grid, evaluate, log_likelihoods, variational_bound, EvalKind, EvalReport};
pub use jem::{jem_ssl_step, one_hot};
pub use mle::mle_step;
pub use pcd::{pcd_gradient, pcd_step, PcdState};
pub use run::{batch_indices, minibatch, Metrics, MetricsWriter, TrainRun};
pub use vera::{
    data_term_grad, mean_energy_grad, update_energy, update_generator, vera_step, EnergyUpdate, GeneratorUpdate,
    VeraState,
};

use crate::diffcore::{AdamState, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn col(n: usize, v: f64) -> Tensor {
    Tensor::full(n, 1, v)
}

/// Adam descends, so ascent passes the negated direction.
fn ascend(opt: &mut AdamState, params: &mut ParamSet, dir: &ParamSet) -> Result<()> {
    opt.step(params, &dir.scale(-1.0))
}

fn check_bound(f: &[f64], bound: f64, step: u64) -> Result<()> {
    match f.iter().find(|v| !(v.abs() <= bound)) {
        Some(v) => Err(Error::Divergence {
            step,
            detail: format!("energy {v:e} on data is outside the bound {bound:e}"),
        }),
        None => Ok(()),
    }
}

/// Non-finite values inside a training step become divergence reports
/// naming the sub-step.
fn guard(step: u64, stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::Divergence {
            step,
            detail: format!("non-finite {what} during {stage}"),
        },
        e => e,
    }
}
