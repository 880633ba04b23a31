use std::f64::consts::{E, PI};

use rand::Rng;

use crate::diffcore::{AdamState, ParamSet};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::tensor::Tensor;

pub const LOG_ETA: &str = "posterior.log_eta";

/// `xi(z | z0) = N(z0, diag(eta)^2)`. The scale is a single shared scalar
/// unless built with [`PosteriorApprox::per_dim`].
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorApprox {
    latent: usize,
    params: ParamSet,
}

impl PosteriorApprox {
    pub const DEFAULT_ETA: f64 = 0.1;

    pub fn shared(latent: usize, eta: f64) -> Result<Self> {
        Self::build(latent, 1, eta)
    }

    /// One scale per latent dimension.
    pub fn per_dim(latent: usize, eta: f64) -> Result<Self> {
        Self::build(latent, latent, eta)
    }

    fn build(latent: usize, k: usize, eta: f64) -> Result<Self> {
        if latent == 0 {
            return Err(Error::invalid("posterior needs a latent dimension >= 1"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("posterior scale must be positive, got {eta}")));
        }
        let mut params = ParamSet::new();
        params.insert(LOG_ETA, Tensor::full(1, k, eta.ln()));
        Ok(Self { latent, params })
    }

    pub fn from_params(latent: usize, params: ParamSet) -> Result<Self> {
        let t = params.require(LOG_ETA)?;
        if t.rows() != 1 || (t.cols() != 1 && t.cols() != latent) || !t.is_finite() {
            return Err(Error::invalid(format!(
                "`{LOG_ETA}` must be finite with shape [1, 1] or [1, {latent}], got {:?}",
                t.shape()
            )));
        }
        Ok(Self { latent, params })
    }

    pub fn latent(&self) -> usize {
        self.latent
    }

    pub fn is_shared(&self) -> bool {
        self.log_eta().len() == 1
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn log_eta(&self) -> &[f64] {
        self.params.get(LOG_ETA).expect("constructed with log_eta").data()
    }

    /// Scale per latent dimension.
    pub fn eta(&self) -> Vec<f64> {
        let le = self.log_eta();
        (0..self.latent).map(|j| le[j % le.len()].exp()).collect()
    }

    /// `sum_j ln eta_j`, the log-determinant part of the entropy.
    fn sum_log_eta(&self) -> f64 {
        let le = self.log_eta();
        if le.len() == 1 {
            self.latent as f64 * le[0]
        } else {
            le.iter().sum()
        }
    }

    /// Differential entropy of `xi`.
    pub fn entropy(&self) -> f64 {
        0.5 * self.latent as f64 * (2.0 * PI * E).ln() + self.sum_log_eta()
    }

    /// `z0 + eta * zeta` row-wise, where `z0` has already been repeated to
    /// match `zeta`.
    pub fn shift(&self, z0: &Tensor, zeta: &Tensor) -> Tensor {
        let eta = self.eta();
        let mut z = z0.clone();
        for r in 0..z.rows() {
            for ((v, e), s) in z.row_mut(r).iter_mut().zip(zeta.row(r)).zip(&eta) {
                *v += e * s;
            }
        }
        z
    }

    /// `log xi(z | z0)` for `z = z0 + eta * zeta`, per row.
    pub fn log_density_of_noise(&self, zeta: &Tensor) -> Vec<f64> {
        let c = -self.sum_log_eta() - 0.5 * self.latent as f64 * (2.0 * PI).ln();
        (0..zeta.rows())
            .map(|r| c - 0.5 * zeta.row(r).iter().map(|v| v * v).sum::<f64>())
            .collect()
    }
}

/// Batch-mean ELBO and its gradient in `log eta`, given the standard normal
/// draws `zeta` (`(n * m) x d`, rows grouped by input). Reusing `zeta`
/// gives common random numbers across evaluations.
pub fn elbo_with(
    post: &PosteriorApprox,
    gen: &Generator,
    z0: &Tensor,
    x: &Tensor,
    zeta: &Tensor,
) -> Result<(f64, Vec<f64>)> {
    let n = z0.rows();
    if n == 0 || x.rows() != n {
        return Err(Error::invalid(format!("ELBO batch needs matching nonempty z0 and x, got {} and {}", n, x.rows())));
    }
    if !zeta.rows().is_multiple_of(n) || zeta.cols() != post.latent() {
        return Err(Error::invalid("ELBO noise must have m rows per input and one column per latent"));
    }
    let m = zeta.rows() / n;
    let z = post.shift(&z0.repeat_rows(m), zeta);
    let xr = x.repeat_rows(m);
    let inv_var = (-2.0 * gen.log_sigma()).exp();
    let (mean, mut gz) = gen.mean_and_vjp_z(&z, |mean| Ok(xr.zip_map(mean, |a, b| (a - b) * inv_var)))?;
    gz.axpy(-1.0, &z);
    let lq = gen.cond_log_prob_from_mean(&xr, &mean);
    let lp = Generator::prior_log_prob(&z);
    let rows = (n * m) as f64;
    let value = lq.iter().zip(&lp).map(|(a, b)| a + b).sum::<f64>() / rows + post.entropy();

    // d/d log eta_j of the expectation is E[grad_z_j * eta_j * zeta_j].
    let eta = post.eta();
    let mut per_dim = vec![0.0; post.latent()];
    for r in 0..z.rows() {
        for j in 0..post.latent() {
            per_dim[j] += gz.get(r, j) * eta[j] * zeta.get(r, j);
        }
    }
    let grad = if post.is_shared() {
        vec![per_dim.iter().sum::<f64>() / rows + post.latent() as f64]
    } else {
        per_dim.iter().map(|v| v / rows + 1.0).collect()
    };
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::non_finite("ELBO or its posterior-scale gradient"));
    }
    Ok((value, grad))
}

/// Monte Carlo ELBO with `m` draws per input.
pub fn elbo<R: Rng + ?Sized>(
    post: &PosteriorApprox,
    gen: &Generator,
    z0: &Tensor,
    x: &Tensor,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("ELBO needs m >= 1"));
    }
    let zeta = Tensor::randn(z0.rows() * m, post.latent(), rng);
    Ok(elbo_with(post, gen, z0, x, &zeta)?.0)
}

/// One Adam ascent step on the batch ELBO with respect to `log eta`.
/// Returns the ELBO before the step.
pub fn update_eta<R: Rng + ?Sized>(
    post: &mut PosteriorApprox,
    gen: &Generator,
    z0: &Tensor,
    x: &Tensor,
    m: usize,
    adam: &mut AdamState,
    rng: &mut R,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("ELBO needs m >= 1"));
    }
    let zeta = Tensor::randn(z0.rows() * m, post.latent(), rng);
    let (value, grad) = elbo_with(post, gen, z0, x, &zeta)?;
    let mut g = ParamSet::new();
    g.insert(LOG_ETA, Tensor::row_vector(&grad).scale(-1.0));
    adam.step(&mut post.params, &g)?;
    Ok(value)
}

/// Fit `eta` to fresh generator samples for `steps` ELBO updates.
pub fn fit_posterior<R: Rng + ?Sized>(
    post: &mut PosteriorApprox,
    gen: &Generator,
    adam: &mut AdamState,
    steps: usize,
    batch: usize,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut last = f64::NAN;
    for _ in 0..steps {
        let b = gen.sample(batch, rng)?;
        last = update_eta(post, gen, &b.z0, &b.x, m, adam, rng)?;
    }
    Ok(last)
}
