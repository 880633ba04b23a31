//! `train` and `eval`: run directories, metrics streams and checkpoints.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vera_core::container::Container;
use vera_core::data::{load_tabular, make_blobs, make_toy, split_ssl, Scaling, SplitSpec, TabularRules};
use vera_core::diffcore::AdamState;
use vera_core::trainers::{
    batch_indices, evaluate, jem_ssl_step, minibatch, mle_step, pcd_step, vera_step, EvalKind, EvalReport, Metrics,
    MetricsWriter, PcdState, TrainRun, VeraState,
};
use vera_core::{Dataset, EnergyModel, Error, Generator, Result};

use crate::config::{DataSource, KeyValues, RunConfig, Trainer, TrainerConfig};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const ENERGY_FILE: &str = "energy.ckpt";
pub const GENERATOR_FILE: &str = "generator.ckpt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Offsets keep held-out sets and evaluation draws disjoint from training.
const TEST_SEED_OFFSET: u64 = 1000;
const EVAL_SEED_OFFSET: u64 = 0x5eed;

/// Training rows plus the held-out set used for evaluation, if any. For the
/// semi-supervised trainer `train` is the labeled part.
pub struct RunData {
    pub train: Dataset,
    pub unlabeled: Option<Dataset>,
    pub heldout: Option<Dataset>,
}

impl RunData {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let seed = cfg.seed;
        let d = &cfg.data;
        let make = |n: usize, s: u64| -> Result<Dataset> {
            match &d.source {
                DataSource::Toy { kind, noise } => make_toy(*kind, n, *noise, s),
                DataSource::Blobs { dim, separation } => make_blobs(n, *dim, *separation, s),
                DataSource::Csv { .. } => unreachable!("tabular data is loaded whole"),
            }
        };
        let full = match &d.source {
            DataSource::Csv { path, label, scaling } => {
                let rules = TabularRules {
                    label: (!label.is_empty()).then(|| label.clone()),
                    scaling: match scaling.as_str() {
                        "zscore" => Scaling::ZScore,
                        "minmax" => Scaling::MinMax,
                        o => {
                            return Err(Error::InvalidArgument(format!(
                                "`data.scaling` must be zscore or minmax, got `{o}`"
                            )))
                        }
                    },
                    ..TabularRules::default()
                };
                load_tabular(path, &rules)?
            }
            _ => make(d.n, seed)?,
        };
        if let TrainerConfig::JemSsl { validation, per_class, .. } = &cfg.settings {
            let sp = split_ssl(
                &full,
                &SplitSpec {
                    validation: *validation,
                    per_class: *per_class,
                    seed,
                },
            )?;
            return Ok(Self {
                train: sp.labeled,
                unlabeled: Some(sp.unlabeled),
                heldout: Some(sp.validation),
            });
        }
        match &d.source {
            DataSource::Csv { .. } => {
                let sp = split_ssl(
                    &full,
                    &SplitSpec {
                        validation: 0.1,
                        per_class: 0,
                        seed,
                    },
                )?;
                Ok(Self {
                    train: sp.unlabeled,
                    unlabeled: None,
                    heldout: Some(sp.validation),
                })
            }
            _ => Ok(Self {
                train: full,
                unlabeled: None,
                heldout: (d.test_n > 0)
                    .then(|| make(d.test_n, seed + TEST_SEED_OFFSET))
                    .transpose()?,
            }),
        }
    }

    fn dim(&self) -> usize {
        self.train.dim()
    }

    fn classes(&self) -> usize {
        let n = |d: &Dataset| if d.labels.is_some() { d.num_classes() } else { 0 };
        [Some(&self.train), self.unlabeled.as_ref(), self.heldout.as_ref()]
            .into_iter()
            .flatten()
            .map(n)
            .max()
            .unwrap_or(0)
            .max(2)
    }
}

/// The metric reported for a run, when the model family supports one.
pub fn default_eval_kind(cfg: &RunConfig, energy: &EnergyModel) -> Option<EvalKind> {
    if cfg.trainer == Trainer::JemSsl {
        return Some(EvalKind::Accuracy);
    }
    let spec = energy.spec();
    (spec.is_normalized() || energy.log_partition_analytic().is_ok() || spec.dim() <= 2).then_some(EvalKind::LogLik)
}

/// Where a run goes when no output directory is given: under
/// `$VERA_RUNS_DIR` (default `runs`).
pub fn default_run_dir(cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os("VERA_RUNS_DIR").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    let data = cfg.resolved.get("data").unwrap_or("data");
    root.join(format!("{}-{}-seed{}", cfg.trainer.name(), data, cfg.seed))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub steps: u64,
    pub eval: Option<EvalReport>,
    pub energy: EnergyModel,
    pub generator: Option<Generator>,
}

// One per run, so the size spread between variants does not matter.
#[allow(clippy::large_enum_variant)]
enum Learner {
    Vera(VeraState),
    Pcd(PcdState),
    Mle { model: EnergyModel, opt: AdamState },
}

impl Learner {
    fn energy(&self) -> &EnergyModel {
        match self {
            Learner::Vera(s) => &s.energy,
            Learner::Pcd(s) => &s.energy,
            Learner::Mle { model, .. } => model,
        }
    }

    fn generator(&self) -> Option<&Generator> {
        match self {
            Learner::Vera(s) => Some(&s.generator),
            _ => None,
        }
    }
}

fn save_checkpoints(dir: &Path, learner: &Learner, suffix: &str) -> Result<()> {
    learner.energy().to_container().save(dir.join(format!("energy{suffix}.ckpt")))?;
    if let Some(g) = learner.generator() {
        g.to_container().save(dir.join(format!("generator{suffix}.ckpt")))?;
    }
    Ok(())
}

/// Runs the configured trainer, writing `config.txt`, `metrics.jsonl`,
/// checkpoints and (when the model supports it) `eval.json` into `dir`.
/// Metrics written before a divergence stay on disk.
pub fn train(cfg: &RunConfig, dir: &Path, timing: bool) -> Result<TrainOutcome> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.resolved.render())?;
    let data = RunData::load(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spec = cfg.model.spec(data.dim(), data.classes())?;
    let energy = EnergyModel::new(spec, &mut rng)?;
    let mut learner = match &cfg.settings {
        TrainerConfig::Vera(v) | TrainerConfig::JemSsl { cfg: vera_core::trainers::JemSslConfig { vera: v, .. }, .. } => {
            let gspec = cfg.generator.as_ref().expect("generator trainers carry a choice").spec(data.dim())?;
            let gen = Generator::new(gspec, &mut rng)?;
            Learner::Vera(VeraState::new(energy, gen, v)?)
        }
        TrainerConfig::Pcd(p) => Learner::Pcd(PcdState::new(energy, &data.train.features, p, &mut rng)?),
        TrainerConfig::Mle(m) => Learner::Mle {
            model: energy,
            opt: AdamState::new(m.adam()),
        },
    };
    let kind = default_eval_kind(cfg, learner.energy());

    let file = BufWriter::new(File::create(dir.join(METRICS_FILE))?);
    let config_json = serde_json::to_value(cfg.resolved.iter().collect::<std::collections::BTreeMap<_, _>>())?;
    let mut run = TrainRun::new(cfg.seed, config_json, MetricsWriter::new(file, timing));
    run.checkpoint_every = (cfg.checkpoint_every > 0).then_some(cfg.checkpoint_every);
    run.eval_every = (cfg.eval_every > 0).then_some(cfg.eval_every);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SEED_OFFSET);

    let mut last_eval = None;
    for step in 0..cfg.steps {
        let result = one_step(&mut learner, cfg, &data, step, &mut rng);
        let mut m = match result {
            Ok(m) => m,
            Err(e) => {
                run.finish()?;
                return Err(e);
            }
        };
        let done = step + 1;
        if let (Some(kind), Some(held)) = (kind, &data.heldout) {
            if run.eval_due(done, cfg.steps) {
                let r = evaluate(learner.energy(), None, held, kind, &mut eval_rng)?;
                match kind {
                    EvalKind::Accuracy => m.acc = Some(r.mean),
                    _ => m.ll_heldout = Some(r.mean),
                }
                last_eval = Some(r);
            }
        }
        run.record(&m)?;
        if run.checkpoint_due(done, cfg.steps) && done != cfg.steps {
            let sub = dir.join(CHECKPOINT_DIR);
            fs::create_dir_all(&sub)?;
            save_checkpoints(&sub, &learner, &format!("-{done}"))?;
        }
    }
    run.finish()?;
    save_checkpoints(dir, &learner, "")?;
    if let Some(r) = &last_eval {
        fs::write(dir.join(EVAL_FILE), serde_json::to_string(r)? + "\n")?;
    }
    let generator = learner.generator().cloned();
    Ok(TrainOutcome {
        dir: dir.to_path_buf(),
        steps: cfg.steps,
        eval: last_eval,
        energy: learner.energy().clone(),
        generator,
    })
}

fn one_step(learner: &mut Learner, cfg: &RunConfig, data: &RunData, step: u64, rng: &mut ChaCha8Rng) -> Result<Metrics> {
    let x = |rng: &mut ChaCha8Rng| minibatch(&data.train.features, cfg.batch_size, rng);
    match (learner, &cfg.settings) {
        (Learner::Vera(st), TrainerConfig::Vera(v)) => {
            let xb = x(rng);
            vera_step(st, &xb, v, rng)
        }
        (Learner::Vera(st), TrainerConfig::JemSsl { cfg: j, .. }) => {
            let lab = &data.train;
            let idx = batch_indices(lab.len(), j.labeled_batch, rng);
            let labels = lab.labels.as_ref().expect("labeled split carries labels");
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let xl = lab.features.select_rows(&idx);
            let unl = data.unlabeled.as_ref().expect("semi-supervised data has an unlabeled part");
            let xu = minibatch(&unl.features, j.unlabeled_batch, rng);
            jem_ssl_step(st, &xl, &y, &xu, j, rng)
        }
        (Learner::Pcd(st), TrainerConfig::Pcd(p)) => {
            let xb = x(rng);
            pcd_step(st, &xb, p, rng)
        }
        (Learner::Mle { model, opt }, TrainerConfig::Mle(_)) => {
            let xb = x(rng);
            mle_step(model, opt, &xb, step)
        }
        _ => unreachable!("learner is built from the same settings"),
    }
}

/// Rebuilds a finished run's data and checkpoints and evaluates them.
pub fn eval_run(dir: &Path, kind: Option<EvalKind>) -> Result<EvalReport> {
    let cfg = RunConfig::from_kv(&KeyValues::load(dir.join(CONFIG_FILE))?)?;
    let data = RunData::load(&cfg)?;
    let energy = EnergyModel::from_container(&Container::load(dir.join(ENERGY_FILE))?)?;
    let gen_path = dir.join(GENERATOR_FILE);
    let generator = if gen_path.exists() {
        Some(Generator::from_container(&Container::load(gen_path)?)?)
    } else {
        None
    };
    let kind = kind
        .or_else(|| default_eval_kind(&cfg, &energy))
        .ok_or_else(|| Error::Unsupported(format!("no held-out metric for the {} family", energy.spec().family())))?;
    let held = data.heldout.as_ref().unwrap_or(&data.train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SEED_OFFSET);
    evaluate(&energy, generator.as_ref(), held, kind, &mut rng)
}
