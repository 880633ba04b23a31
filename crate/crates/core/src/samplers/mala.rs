//! Langevin refinement in the generator's latent space. The chain state is
//! `(z, eps)` and the target is `log h(z, eps) = f(g(z) + sigma * eps)`,
//! optionally with a standard normal prior on both blocks so that `h` is
//! normalizable even where `f` is flat along the generator's fibres.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::models::EnergyModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
pub struct LatentTarget<'a> {
    pub energy: &'a EnergyModel,
    pub generator: &'a Generator,
    pub prior: bool,
}

/// `log h` and its gradients with respect to both blocks, per chain.
#[derive(Clone, Debug)]
pub struct LatentEval {
    pub x: Tensor,
    pub log_h: Vec<f64>,
    pub grad_z: Tensor,
    pub grad_eps: Tensor,
}

impl<'a> LatentTarget<'a> {
    pub fn new(energy: &'a EnergyModel, generator: &'a Generator) -> Result<Self> {
        if energy.dim() != generator.dim() {
            return Err(Error::invalid(format!(
                "energy dimension {} does not match generator dimension {}",
                energy.dim(),
                generator.dim()
            )));
        }
        Ok(Self {
            energy,
            generator,
            prior: false,
        })
    }

    pub fn with_prior(mut self, prior: bool) -> Self {
        self.prior = prior;
        self
    }

    pub fn eval(&self, z: &Tensor, eps: &Tensor) -> Result<LatentEval> {
        let sigma = self.generator.sigma();
        let mut fx = None;
        let mut x_out = None;
        let (_, mut grad_z) = self.generator.mean_and_vjp_z(z, |mean| {
            let mut x = mean.clone();
            x.axpy(sigma, eps);
            let (f, gx) = self.energy.energy_and_grad(&x)?;
            fx = Some((f, gx.clone()));
            x_out = Some(x);
            Ok(gx)
        })?;
        let (mut log_h, gx) = fx.expect("seed closure ran");
        let mut grad_eps = gx.scale(sigma);
        if self.prior {
            for (r, lh) in log_h.iter_mut().enumerate() {
                let sq: f64 = z.row(r).iter().chain(eps.row(r)).map(|v| v * v).sum();
                *lh -= 0.5 * sq;
            }
            grad_z.axpy(-1.0, z);
            grad_eps.axpy(-1.0, eps);
        }
        Ok(LatentEval {
            x: x_out.expect("seed closure ran"),
            log_h,
            grad_z,
            grad_eps,
        })
    }
}

/// A batch of independent chains sharing one step size.
#[derive(Clone, Debug)]
pub struct MalaState {
    pub z: Tensor,
    pub eps: Tensor,
    pub delta: f64,
    pub proposed: u64,
    pub accepted: u64,
    cache: LatentEval,
}

impl MalaState {
    pub fn new(target: &LatentTarget<'_>, z: Tensor, eps: Tensor, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::invalid(format!("MALA step must be > 0, got {delta}")));
        }
        let cache = target.eval(&z, &eps)?;
        Ok(Self {
            z,
            eps,
            delta,
            proposed: 0,
            accepted: 0,
            cache,
        })
    }

    /// Chains started from the generator's own noise distribution.
    pub fn from_prior<R: Rng + ?Sized>(
        target: &LatentTarget<'_>,
        n: usize,
        delta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let z = Tensor::randn(n, target.generator.latent(), rng);
        let eps = Tensor::randn(n, target.generator.dim(), rng);
        Self::new(target, z, eps, delta)
    }

    pub fn x(&self) -> &Tensor {
        &self.cache.x
    }

    pub fn log_h(&self) -> &[f64] {
        &self.cache.log_h
    }

    /// Fraction of accepted proposals since construction.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn reset_counts(&mut self) {
        self.proposed = 0;
        self.accepted = 0;
    }
}

fn drift_sq(to: &[f64], from: &[f64], grad: &[f64], half_delta: f64) -> f64 {
    to.iter()
        .zip(from)
        .zip(grad)
        .map(|((t, f), g)| (t - f - half_delta * g).powi(2))
        .sum()
}

/// Log MH ratio for moving chain `r` from `cur` to `prop`, including the
/// forward and reverse proposal densities. Each block proposes from
/// `N(v + (delta / 2) grad_v log h, delta I)`.
#[allow(clippy::too_many_arguments)]
pub fn mala_log_ratio(cur: &LatentEval, cz: &Tensor, ce: &Tensor, prop: &LatentEval, pz: &Tensor, pe: &Tensor, r: usize, delta: f64) -> f64 {
    let hd = 0.5 * delta;
    let inv = 0.5 / delta;
    let fwd = drift_sq(pz.row(r), cz.row(r), cur.grad_z.row(r), hd) + drift_sq(pe.row(r), ce.row(r), cur.grad_eps.row(r), hd);
    let rev = drift_sq(cz.row(r), pz.row(r), prop.grad_z.row(r), hd) + drift_sq(ce.row(r), pe.row(r), prop.grad_eps.row(r), hd);
    prop.log_h[r] - cur.log_h[r] + inv * (fwd - rev)
}

/// One MH-corrected Langevin move for every chain. Returns per-chain
/// acceptance flags; rejected chains keep their exact previous state.
pub fn mala_latent_step<R: Rng + ?Sized>(
    target: &LatentTarget<'_>,
    state: &mut MalaState,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let n = state.z.rows();
    let delta = state.delta;
    let mut pz = state.z.clone();
    pz.axpy(0.5 * delta, &state.cache.grad_z);
    let sd = delta.sqrt();
    pz.axpy(sd, &Tensor::randn(n, state.z.cols(), rng));
    let mut pe = state.eps.clone();
    pe.axpy(0.5 * delta, &state.cache.grad_eps);
    pe.axpy(sd, &Tensor::randn(n, state.eps.cols(), rng));
    let u: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    state.proposed += n as u64;
    let prop = match target.eval(&pz, &pe) {
        Ok(p) => p,
        // A proposal batch outside the energy's finite region is rejected wholesale.
        Err(Error::NonFinite(_)) => return Ok(vec![false; n]),
        Err(e) => return Err(e),
    };
    let mut acc = vec![false; n];
    for r in 0..n {
        let d = mala_log_ratio(&state.cache, &state.z, &state.eps, &prop, &pz, &pe, r, delta);
        if d.is_finite() && u[r].ln() < d {
            acc[r] = true;
            state.accepted += 1;
            state.z.row_mut(r).copy_from_slice(pz.row(r));
            state.eps.row_mut(r).copy_from_slice(pe.row(r));
            state.cache.x.row_mut(r).copy_from_slice(prop.x.row(r));
            state.cache.grad_z.row_mut(r).copy_from_slice(prop.grad_z.row(r));
            state.cache.grad_eps.row_mut(r).copy_from_slice(prop.grad_eps.row(r));
            state.cache.log_h[r] = prop.log_h[r];
        }
    }
    Ok(acc)
}

/// Stochastic-approximation step-size adaptation:
/// `delta <- max(floor, delta * exp(c0 / sqrt(t + 1) * (rate - target)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTuner {
    pub target: f64,
    pub c0: f64,
    pub floor: f64,
    pub burn_in: usize,
}

impl Default for StepTuner {
    fn default() -> Self {
        Self {
            target: 0.57,
            c0: 1.0,
            floor: 1e-6,
            burn_in: 500,
        }
    }
}

impl StepTuner {
    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(Error::invalid(format!("target acceptance {} outside (0, 1)", self.target)));
        }
        if !(self.floor > 0.0) || !(self.c0 > 0.0) {
            return Err(Error::invalid("step tuner needs positive floor and gain"));
        }
        Ok(())
    }

    pub fn adapt(&self, delta: f64, rate: f64, t: usize) -> f64 {
        let c = self.c0 / ((t + 1) as f64).sqrt();
        (delta * (c * (rate - self.target)).exp()).max(self.floor)
    }
}

/// Run `tuner.burn_in` adaptive steps and return the tuned step size.
/// Acceptance counters are reset afterwards so they reflect frozen-step
/// behavior only.
pub fn tune_step_size<R: Rng + ?Sized>(
    target: &LatentTarget<'_>,
    state: &mut MalaState,
    tuner: &StepTuner,
    rng: &mut R,
) -> Result<f64> {
    tuner.validate()?;
    for t in 0..tuner.burn_in {
        let acc = mala_latent_step(target, state, rng)?;
        let rate = acc.iter().filter(|a| **a).count() as f64 / acc.len().max(1) as f64;
        state.delta = tuner.adapt(state.delta, rate, t);
    }
    state.reset_counts();
    Ok(state.delta)
}

/// One row of a refinement trace: mean `log h` across chains and the
/// fraction of chains that accepted at this step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub log_h: f64,
    pub accept: f64,
}

/// Tune, then run `steps` frozen-step transitions, recording a trace.
pub fn refine<R: Rng + ?Sized>(
    target: &LatentTarget<'_>,
    state: &mut MalaState,
    tuner: &StepTuner,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<TraceRow>> {
    tune_step_size(target, state, tuner, rng)?;
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let acc = mala_latent_step(target, state, rng)?;
        let n = acc.len().max(1) as f64;
        trace.push(TraceRow {
            step,
            log_h: state.log_h().iter().sum::<f64>() / n,
            accept: acc.iter().filter(|a| **a).count() as f64 / n,
        });
    }
    Ok(trace)
}
