//! Hamiltonian Monte Carlo with standard-normal momenta. Rows of the state
//! are independent chains sharing one step size.

use rand::Rng;

use super::mala::StepTuner;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A log-density and its gradient, evaluated per row.
pub trait LogTarget {
    fn log_grad(&mut self, z: &Tensor) -> Result<(Vec<f64>, Tensor)>;
}

impl<F> LogTarget for F
where
    F: FnMut(&Tensor) -> Result<(Vec<f64>, Tensor)>,
{
    fn log_grad(&mut self, z: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        self(z)
    }
}

/// Current position of a batch of chains with cached target values.
#[derive(Clone, Debug)]
pub struct HmcChain {
    pub z: Tensor,
    pub log_p: Vec<f64>,
    pub grad: Tensor,
}

impl HmcChain {
    pub fn new<T: LogTarget + ?Sized>(target: &mut T, z: Tensor) -> Result<Self> {
        let (log_p, grad) = target.log_grad(&z)?;
        Ok(Self { z, log_p, grad })
    }
}

#[derive(Clone, Debug, Default)]
pub struct HmcStats {
    pub accepted: Vec<bool>,
    /// Proposals rejected because the Hamiltonian was not finite.
    pub nonfinite: Vec<bool>,
    /// `H(end) - H(start)` per chain.
    pub delta_h: Vec<f64>,
}

impl HmcStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|a| **a).count() as f64 / self.accepted.len() as f64
    }
}

/// `L` leapfrog steps from `(z, p)` with cached gradient `grad`.
/// Returns the end position, momentum, log-density and gradient.
pub fn leapfrog<T: LogTarget + ?Sized>(
    target: &mut T,
    z: &Tensor,
    p: &Tensor,
    grad: &Tensor,
    steps: usize,
    eps: f64,
) -> Result<(Tensor, Tensor, Vec<f64>, Tensor)> {
    let mut z = z.clone();
    let mut p = p.clone();
    p.axpy(0.5 * eps, grad);
    let mut lp = Vec::new();
    let mut g = grad.clone();
    for l in 0..steps {
        z.axpy(eps, &p);
        let (lpn, gn) = target.log_grad(&z)?;
        lp = lpn;
        g = gn;
        p.axpy(if l + 1 < steps { eps } else { 0.5 * eps }, &g);
    }
    if steps == 0 {
        p.axpy(-0.5 * eps, grad);
    }
    Ok((z, p, lp, g))
}

fn kinetic(p: &Tensor, r: usize) -> f64 {
    0.5 * p.row(r).iter().map(|v| v * v).sum::<f64>()
}

/// One HMC transition per chain. Proposals with a non-finite Hamiltonian
/// are rejected and flagged.
pub fn hmc_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    target: &mut T,
    chain: &mut HmcChain,
    leapfrog_steps: usize,
    eps: f64,
    rng: &mut R,
) -> Result<HmcStats> {
    if leapfrog_steps == 0 {
        return Err(Error::invalid("HMC needs at least one leapfrog step"));
    }
    let n = chain.z.rows();
    let p0 = Tensor::randn(n, chain.z.cols(), rng);
    // Errors from the target mid-trajectory count as divergent proposals.
    let proposal = leapfrog(target, &chain.z, &p0, &chain.grad, leapfrog_steps, eps);
    let mut stats = HmcStats {
        accepted: vec![false; n],
        nonfinite: vec![false; n],
        delta_h: vec![f64::NAN; n],
    };
    let (z1, p1, lp1, g1) = match proposal {
        Ok(v) => v,
        Err(_) => {
            stats.nonfinite = vec![true; n];
            return Ok(stats);
        }
    };
    for r in 0..n {
        let h0 = -chain.log_p[r] + kinetic(&p0, r);
        let h1 = -lp1[r] + kinetic(&p1, r);
        let u: f64 = rng.random();
        if !h1.is_finite() || !z1.row(r).iter().all(|v| v.is_finite()) {
            stats.nonfinite[r] = true;
            continue;
        }
        let dh = h1 - h0;
        stats.delta_h[r] = dh;
        if u.ln() < -dh {
            stats.accepted[r] = true;
            chain.z.row_mut(r).copy_from_slice(z1.row(r));
            chain.grad.row_mut(r).copy_from_slice(g1.row(r));
            chain.log_p[r] = lp1[r];
        }
    }
    Ok(stats)
}

/// Adapt the leapfrog step on pilot chains started at `z0` so that the
/// batch acceptance rate approaches `tuner.target`. The pilot chains are
/// discarded.
pub fn tune_hmc_step<T: LogTarget + ?Sized, R: Rng + ?Sized>(
    target: &mut T,
    z0: &Tensor,
    leapfrog_steps: usize,
    init_step: f64,
    tuner: &StepTuner,
    rng: &mut R,
) -> Result<f64> {
    tuner.validate()?;
    let mut chain = HmcChain::new(target, z0.clone())?;
    let mut eps = init_step.max(tuner.floor);
    for t in 0..tuner.burn_in {
        let s = hmc_step(target, &mut chain, leapfrog_steps, eps, rng)?;
        eps = tuner.adapt(eps, s.acceptance_rate(), t);
    }
    Ok(eps)
}
