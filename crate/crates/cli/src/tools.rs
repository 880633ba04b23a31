//! `bias-bench`, `density-grid` and `refine`.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vera_core::container::Container;
use vera_core::data::make_linear_gaussian;
use vera_core::diffcore::{AdamConfig, AdamState};
use vera_core::entropy::{
    fit_posterior, score_bias_benchmark, write_bias_csv, BiasReport, EstimatorSpec, HmcScoreConfig, PosteriorApprox,
};
use vera_core::models::{grid_log_density, GridSpec};
use vera_core::samplers::{refine, LatentTarget, MalaState, StepTuner, TraceRow};
use vera_core::{EnergyModel, Error, Generator, Result, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct BiasBenchConfig {
    pub dim: usize,
    pub latent: usize,
    pub seed: u64,
    pub snis: Vec<usize>,
    pub hmc: Vec<usize>,
    pub leapfrog: usize,
    pub trials: usize,
    pub repeats: usize,
    pub per_dim_eta: bool,
    /// ELBO steps used to fit the posterior scale before measuring.
    pub posterior_steps: usize,
}

impl Default for BiasBenchConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            latent: 5,
            seed: 0,
            snis: vec![1, 5, 20, 100],
            hmc: vec![2, 500],
            leapfrog: 5,
            trials: 10,
            repeats: 1000,
            per_dim_eta: false,
            posterior_steps: 500,
        }
    }
}

/// Rows for the analytic score, then every SNIS `k`, then every HMC
/// burn-in, all measured on the same inputs.
pub fn bias_bench(cfg: &BiasBenchConfig) -> Result<Vec<BiasReport>> {
    if cfg.snis.is_empty() && cfg.hmc.is_empty() {
        return Err(Error::InvalidArgument("bias bench needs at least one SNIS or HMC setting".into()));
    }
    let (gen, _) = make_linear_gaussian(cfg.dim, cfg.latent, 1, cfg.seed)?;
    let mut post = if cfg.per_dim_eta {
        PosteriorApprox::per_dim(cfg.latent, PosteriorApprox::DEFAULT_ETA)?
    } else {
        PosteriorApprox::shared(cfg.latent, PosteriorApprox::DEFAULT_ETA)?
    };
    let mut adam = AdamState::new(AdamConfig::gan(0.01));
    let mut fit_rng = ChaCha8Rng::seed_from_u64(cfg.seed + 1);
    fit_posterior(&mut post, &gen, &mut adam, cfg.posterior_steps, 256, 1, &mut fit_rng)?;

    let specs = std::iter::once(EstimatorSpec::Analytic)
        .chain(cfg.snis.iter().map(|&k| EstimatorSpec::Snis { k }))
        .chain(cfg.hmc.iter().map(|&b| {
            EstimatorSpec::Hmc(HmcScoreConfig {
                burn_in: b,
                leapfrog: cfg.leapfrog,
                ..HmcScoreConfig::default()
            })
        }));
    specs
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 2);
            score_bias_benchmark(&gen, &post, &s, cfg.trials, cfg.repeats, &mut rng)
        })
        .collect()
}

pub fn write_bias(out: impl Write, rows: &[BiasReport]) -> Result<()> {
    write_bias_csv(out, rows)
}

/// Grid-normalized log-density of a 1-D or 2-D energy checkpoint as CSV
/// rows `x[,y],log_density`. `bounds` holds `lo,hi` per dimension.
pub fn density_grid(checkpoint: &Path, bounds: &[f64], resolution: usize, out: impl Write) -> Result<usize> {
    let energy = EnergyModel::from_container(&Container::load(checkpoint)?)?;
    let dim = energy.dim();
    if dim > 2 {
        return Err(Error::Unsupported(format!("density grid needs a 1-D or 2-D model, got dimension {dim}")));
    }
    if bounds.len() != 2 * dim {
        return Err(Error::InvalidArgument(format!(
            "`--bounds` needs {} values (lo,hi per dimension), got {}",
            2 * dim,
            bounds.len()
        )));
    }
    let grid = GridSpec {
        bounds: bounds.chunks(2).map(|c| (c[0], c[1])).collect(),
        resolution,
    };
    let (pts, logd, _) = grid_log_density(&energy, &grid)?;
    let mut w = csv::Writer::from_writer(out);
    let header: &[&str] = if dim == 1 { &["x", "log_density"] } else { &["x", "y", "log_density"] };
    w.write_record(header)?;
    for (r, ld) in logd.iter().enumerate() {
        let mut rec: Vec<String> = pts.row(r).iter().map(|v| v.to_string()).collect();
        rec.push(ld.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(logd.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub n: usize,
    pub steps: usize,
    pub seed: u64,
    pub delta: f64,
    /// Standard normal prior on `(z, eps)` in the target.
    pub prior: bool,
    pub tuner: StepTuner,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            steps: 100,
            seed: 0,
            delta: 0.1,
            prior: false,
            tuner: StepTuner::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub chains: usize,
    pub steps: usize,
    /// Step size after tuning; the initial value when `steps` is 0.
    pub delta: f64,
    /// Acceptance over the frozen-step phase.
    pub acceptance_rate: f64,
}

pub struct Refined {
    pub samples: Tensor,
    pub trace: Vec<TraceRow>,
    pub report: RefineReport,
}

/// Latent MALA on `exp f(g(z) + sigma eps)`, optionally times the standard
/// normal prior, starting from raw generator draws. With `steps = 0` nothing
/// moves, tuning included.
pub fn refine_samples(energy: &EnergyModel, generator: &Generator, cfg: &RefineConfig) -> Result<Refined> {
    let target = LatentTarget::new(energy, generator)?.with_prior(cfg.prior);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = MalaState::from_prior(&target, cfg.n, cfg.delta, &mut rng)?;
    let trace = if cfg.steps == 0 {
        Vec::new()
    } else {
        refine(&target, &mut state, &cfg.tuner, cfg.steps, &mut rng)?
    };
    Ok(Refined {
        samples: state.x().clone(),
        trace,
        report: RefineReport {
            chains: cfg.n,
            steps: cfg.steps,
            delta: state.delta,
            acceptance_rate: state.acceptance_rate(),
        },
    })
}

pub fn load_pair(energy: &Path, generator: &Path) -> Result<(EnergyModel, Generator)> {
    let e = EnergyModel::from_container(&Container::load(energy)?)?;
    let g = Generator::from_container(&Container::load(generator)?)?;
    if e.dim() != g.dim() {
        return Err(Error::InvalidArgument(format!(
            "energy dimension {} does not match generator dimension {}",
            e.dim(),
            g.dim()
        )));
    }
    Ok((e, g))
}

/// Samples as CSV with columns `x0..x{D-1}`.
pub fn write_samples(out: impl Write, x: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record((0..x.cols()).map(|c| format!("x{c}")))?;
    for r in 0..x.rows() {
        w.write_record(x.row(r).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
