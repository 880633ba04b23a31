use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::models::{grid_log_partition, EnergyModel, GridSpec};
use crate::samplers::data_box;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    /// Mean held-out log-likelihood: exact for normalized families, grid
    /// normalized otherwise (dimension 1 or 2 only).
    LogLik,
    Accuracy,
    /// `log Z - (E_q f + H(q))` over one generator sample per dataset row;
    /// needs an analytic `log Z` and a linear generator.
    BoundGap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: EvalKind,
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

fn summarize(kind: EvalKind, v: &[f64]) -> EvalReport {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    EvalReport {
        kind,
        mean,
        stderr: (var / n).sqrt(),
        n: v.len(),
    }
}

/// Grid used for held-out likelihoods of unnormalized low-dimensional
/// energies: the data box padded by half its width on each side.
pub fn default_eval_grid(data: &Dataset) -> GridSpec {
    let (lo, hi) = data_box(&data.features, 0.5);
    GridSpec {
        bounds: lo.into_iter().zip(hi).collect(),
        resolution: if data.dim() == 1 { 2001 } else { 301 },
    }
}

/// Per-row held-out log-likelihood.
pub fn log_likelihoods(energy: &EnergyModel, data: &Dataset, grid: Option<&GridSpec>) -> Result<Vec<f64>> {
    if energy.spec().is_normalized() || energy.log_partition_analytic().is_ok() {
        return energy.log_prob(&data.features);
    }
    if energy.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "log-likelihood of a {}-dimensional {} energy has no exact or grid normalizer",
            energy.dim(),
            energy.spec().family()
        )));
    }
    let owned;
    let grid = match grid {
        Some(g) => g,
        None => {
            owned = default_eval_grid(data);
            &owned
        }
    };
    let lz = grid_log_partition(energy, grid)?;
    Ok(energy.energy(&data.features)?.into_iter().map(|f| f - lz).collect())
}

/// Mean held-out metric with its standard error.
pub fn evaluate<R: Rng + ?Sized>(
    energy: &EnergyModel,
    generator: Option<&Generator>,
    data: &Dataset,
    kind: EvalKind,
    rng: &mut R,
) -> Result<EvalReport> {
    match kind {
        EvalKind::LogLik => {
            if data.is_empty() {
                return Err(Error::invalid("log-likelihood of an empty dataset"));
            }
            Ok(summarize(kind, &log_likelihoods(energy, data, None)?))
        }
        EvalKind::Accuracy => {
            let labels = data
                .labels
                .as_ref()
                .ok_or_else(|| Error::invalid("accuracy needs a labeled dataset"))?;
            if labels.is_empty() {
                return Err(Error::invalid("accuracy of an empty dataset"));
            }
            let pred = energy.predict(&data.features)?;
            let hits: Vec<f64> = pred.iter().zip(labels).map(|(p, y)| f64::from(u8::from(p == y))).collect();
            Ok(summarize(kind, &hits))
        }
        EvalKind::BoundGap => {
            let gen = generator.ok_or_else(|| Error::invalid("bound gap needs a generator"))?;
            let lz = energy.log_partition_analytic()?;
            let h = gen.as_linear()?.entropy();
            let n = data.len().max(1);
            let b = gen.sample(n, rng)?;
            let gaps: Vec<f64> = energy.energy(&b.x)?.into_iter().map(|f| lz - f - h).collect();
            Ok(summarize(kind, &gaps))
        }
    }
}

/// `E_q f + H(q)` for a linear generator with `n` samples, with the Monte
/// Carlo standard error of the first term.
pub fn variational_bound<R: Rng + ?Sized>(
    energy: &EnergyModel,
    gen: &Generator,
    n: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let h = gen.as_linear()?.entropy();
    let b = gen.sample(n, rng)?;
    let r = summarize(EvalKind::BoundGap, &energy.energy(&b.x)?);
    Ok((r.mean + h, r.stderr))
}
