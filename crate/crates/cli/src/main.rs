use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vera_cli::config::{KeyValues, RunConfig};
use vera_cli::tools::{self, BiasBenchConfig, RefineConfig};
use vera_cli::train::{default_run_dir, eval_run, train};
use vera_cli::{exit_code, EXIT_CONFIG};
use vera_core::samplers::StepTuner;
use vera_core::trainers::EvalKind;
use vera_core::{Error, Result};

/// Train and inspect energy-based models with entropy-regularized generators.
///
/// Exit status: 0 success, 2 configuration error, 3 divergence guard,
/// 4 numerical failure, 1 anything else.
#[derive(Parser)]
#[command(name = "vera", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory (config.txt, metrics.jsonl,
    /// checkpoints, eval.json).
    Train(TrainArgs),
    /// Evaluate a finished run directory on its held-out data.
    Eval(EvalArgs),
    /// Bias of score estimators on a synthetic linear-Gaussian generator.
    BiasBench(BiasArgs),
    /// Grid-normalized log-density of a 1-D or 2-D energy checkpoint.
    DensityGrid(GridArgs),
    /// Refine generator samples with latent-space MALA.
    Refine(RefineArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file; flags and --set override it.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// vera, pcd, mle or jem-ssl.
    #[arg(long)]
    trainer: Option<String>,
    /// moons, circles, rings, blobs or csv.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Entropy weight (vera, jem-ssl).
    #[arg(long)]
    lambda: Option<String>,
    /// Energy model family.
    #[arg(long)]
    model: Option<String>,
    /// Any config key, as key=value. Repeatable.
    #[arg(short, long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory [default: $VERA_RUNS_DIR/<trainer>-<data>-seed<seed>,
    /// with VERA_RUNS_DIR defaulting to `runs`].
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Add wall-clock milliseconds to each metrics record (makes the stream
    /// non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Loglik,
    Accuracy,
    BoundGap,
}

impl From<Kind> for EvalKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Loglik => EvalKind::LogLik,
            Kind::Accuracy => EvalKind::Accuracy,
            Kind::BoundGap => EvalKind::BoundGap,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Metric [default: accuracy for jem-ssl runs, log-likelihood otherwise].
    #[arg(long, value_enum)]
    kind: Option<Kind>,
}

#[derive(Args)]
struct BiasArgs {
    #[arg(long, default_value_t = 20)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    latent: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Importance-sample counts, comma separated. Empty to skip.
    #[arg(long, default_value = "1,5,20,100", value_delimiter = ',')]
    snis: Vec<usize>,
    /// HMC burn-in lengths, comma separated. Empty to skip.
    #[arg(long, default_value = "2,500", value_delimiter = ',')]
    hmc: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    leapfrog: usize,
    /// Inputs drawn from the generator.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Estimates averaged per input.
    #[arg(long, default_value_t = 1000)]
    repeats: usize,
    /// Fit one posterior scale per latent dimension.
    #[arg(long)]
    per_dim_eta: bool,
    /// CSV destination [default: stdout].
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Energy checkpoint (energy.ckpt of a run).
    #[arg(long)]
    checkpoint: PathBuf,
    /// lo,hi for each dimension, e.g. -3,3,-3,3.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    bounds: Vec<f64>,
    /// Points per axis, endpoints included.
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    /// CSV destination [default: stdout].
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    energy: PathBuf,
    #[arg(long)]
    generator: PathBuf,
    /// Number of chains (samples).
    #[arg(short, long, default_value_t = 1000)]
    n: usize,
    /// Frozen-step transitions after tuning; 0 returns the raw samples.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    /// Adaptive steps before the step size is frozen.
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    /// Initial proposal variance.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0.57)]
    target_accept: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiply the target by a standard normal prior on (z, eps). Keeps
    /// chains from drifting where the energy is flat.
    #[arg(long)]
    prior: bool,
    /// Sample CSV destination [default: stdout].
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Per-step trace CSV (step, log_h, accept).
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut kv = match &a.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new(),
    };
    let flags = [
        ("trainer", a.trainer),
        ("data", a.data),
        ("steps", a.steps.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
        ("lambda", a.lambda),
        ("model", a.model),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            kv.set(k, v)?;
        }
    }
    for pair in &a.set {
        kv.set_pair(pair)?;
    }
    let cfg = RunConfig::from_kv(&kv)?;
    let dir = a.out.unwrap_or_else(|| default_run_dir(&cfg));
    let outcome = train(&cfg, &dir, a.timing)?;
    println!("run directory: {}", outcome.dir.display());
    if let Some(r) = outcome.eval {
        println!("{}", serde_json::to_string(&r)?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => {
            let r = eval_run(&a.run, a.kind.map(Into::into))?;
            println!("{}", serde_json::to_string(&r)?);
            Ok(())
        }
        Command::BiasBench(a) => {
            let cfg = BiasBenchConfig {
                dim: a.dim,
                latent: a.latent,
                seed: a.seed,
                snis: a.snis,
                hmc: a.hmc,
                leapfrog: a.leapfrog,
                trials: a.trials,
                repeats: a.repeats,
                per_dim_eta: a.per_dim_eta,
                ..BiasBenchConfig::default()
            };
            let rows = tools::bias_bench(&cfg)?;
            tools::write_bias(sink(a.out.as_deref())?, &rows)
        }
        Command::DensityGrid(a) => {
            tools::density_grid(&a.checkpoint, &a.bounds, a.resolution, sink(a.out.as_deref())?).map(|_| ())
        }
        Command::Refine(a) => {
            let (e, g) = tools::load_pair(&a.energy, &a.generator)?;
            let cfg = RefineConfig {
                n: a.n,
                steps: a.steps,
                seed: a.seed,
                delta: a.delta,
                prior: a.prior,
                tuner: StepTuner {
                    burn_in: a.burn_in,
                    target: a.target_accept,
                    ..StepTuner::default()
                },
            };
            let r = tools::refine_samples(&e, &g, &cfg)?;
            tools::write_samples(sink(a.out.as_deref())?, &r.samples)?;
            if let Some(p) = &a.trace {
                let mut w = csv::Writer::from_path(p).map_err(Error::from)?;
                for row in &r.trace {
                    w.serialize(row)?;
                }
                w.flush()?;
            }
            eprintln!("{}", serde_json::to_string(&r.report)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
