use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::posterior::PosteriorApprox;
use super::score::{hmc_posterior_score, snis_score, tune_posterior_hmc_step, HmcScoreConfig};
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::tensor::Tensor;

/// A score estimator under test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// The closed-form score of a linear generator.
    Analytic,
    Snis { k: usize },
    Hmc(HmcScoreConfig),
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Analytic => "analytic",
            EstimatorSpec::Snis { .. } => "snis",
            EstimatorSpec::Hmc(_) => "hmc",
        }
    }

    /// `k` for SNIS, burn-in for HMC.
    pub fn param(&self) -> usize {
        match self {
            EstimatorSpec::Analytic => 0,
            EstimatorSpec::Snis { k } => *k,
            EstimatorSpec::Hmc(c) => c.burn_in,
        }
    }
}

/// One row of the bias CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub estimator: String,
    pub param: usize,
    pub bias_mean: f64,
    pub bias_stderr: f64,
    pub wall_time_s: f64,
}

/// Mean absolute per-dimension deviation of the `repeats`-averaged
/// estimate from the analytic score, over `trials` generator samples.
/// Every repeat for an input conditions on the latent that produced it.
pub fn score_bias_benchmark<R: Rng + ?Sized>(
    gen: &Generator,
    post: &PosteriorApprox,
    spec: &EstimatorSpec,
    trials: usize,
    repeats: usize,
    rng: &mut R,
) -> Result<BiasReport> {
    if trials == 0 || repeats == 0 {
        return Err(Error::invalid("bias benchmark needs trials >= 1 and repeats >= 1"));
    }
    let lin = gen.as_linear()?;
    let batch = gen.sample(trials, rng)?;
    let truth = lin.score(&batch.x);

    let start = Instant::now();
    let mut spec = spec.clone();
    if let EstimatorSpec::Hmc(cfg) = &mut spec {
        if cfg.step.is_none() {
            cfg.step = Some(tune_posterior_hmc_step(gen, &batch.x, &batch.z0, cfg, 100, rng)?);
        }
    }
    let mut avg = Tensor::zeros(trials, gen.dim());
    for _ in 0..repeats {
        let est = match &spec {
            EstimatorSpec::Analytic => truth.clone(),
            EstimatorSpec::Snis { k } => snis_score(gen, post, &batch.x, &batch.z0, *k, rng)?.score,
            EstimatorSpec::Hmc(cfg) => hmc_posterior_score(gen, &batch.x, &batch.z0, cfg, rng)?.score,
        };
        avg.axpy(1.0 / repeats as f64, &est);
    }
    let wall_time_s = start.elapsed().as_secs_f64();

    let per_input: Vec<f64> = (0..trials)
        .map(|i| {
            avg.row(i)
                .iter()
                .zip(truth.row(i))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / gen.dim() as f64
        })
        .collect();
    let t = trials as f64;
    let mean = per_input.iter().sum::<f64>() / t;
    let stderr = if trials > 1 {
        (per_input.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0)).sqrt() / t.sqrt()
    } else {
        0.0
    };
    Ok(BiasReport {
        estimator: spec.name().to_string(),
        param: spec.param(),
        bias_mean: mean,
        bias_stderr: stderr,
        wall_time_s,
    })
}

/// Header `estimator,param,bias_mean,bias_stderr,wall_time_s`.
pub fn write_bias_csv<W: Write>(out: W, rows: &[BiasReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
