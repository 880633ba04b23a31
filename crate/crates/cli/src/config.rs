//! Flat `key = value` run configuration.
//!
//! A run is described by a map of string keys. Files hold one pair per line
//! (`#` starts a comment); command-line overrides are applied on top. After
//! resolution every key the trainer reads is filled in, and that complete
//! map is what a run directory stores, so it replays the run on its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use vera_core::data::ToyKind;
use vera_core::generator::GeneratorSpec;
use vera_core::models::EnergySpec;
use vera_core::samplers::SgldConfig;
use vera_core::trainers::{JemSslConfig, LambdaDecay, MleConfig, PcdConfig, VeraConfig};
use vera_core::{Error, Result};

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

/// Raw key/value pairs, later entries winning.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues(BTreeMap<String, String>);

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("config line {}: expected `key = value`, got `{line}`", n + 1)))?;
            kv.set(k.trim(), v.trim())?;
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses one `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| bad(format!("override `{pair}` is not of the form key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(bad(format!("invalid config key `{key}`")));
        }
        self.0.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// The file form: sorted `key = value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainer {
    Vera,
    Pcd,
    Mle,
    JemSsl,
}

impl Trainer {
    pub fn name(self) -> &'static str {
        match self {
            Trainer::Vera => "vera",
            Trainer::Pcd => "pcd",
            Trainer::Mle => "mle",
            Trainer::JemSsl => "jem-ssl",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        const VERA: &[&str] = &[
            "lambda",
            "lambda_decay_to",
            "lambda_decay_over",
            "gamma",
            "k",
            "elbo_samples",
            "lr_energy",
            "lr_generator",
            "lr_posterior",
            "beta1",
            "beta2",
            "eta_init",
            "per_dim_eta",
            "divergence_bound",
            "generator",
            "generator.latent",
            "generator.hidden",
        ];
        const PCD: &[&str] = &[
            "lr_energy",
            "beta1",
            "beta2",
            "gamma",
            "sgld_step",
            "sgld_steps",
            "sgld_noise",
            "buffer_size",
            "reinit",
            "divergence_bound",
        ];
        const MLE: &[&str] = &["lr_energy", "beta1", "beta2"];
        const JEM: &[&str] = &[
            "alpha",
            "beta",
            "unconditional",
            "labeled_batch",
            "unlabeled_batch",
            "split.validation",
            "split.per_class",
        ];
        match self {
            Trainer::Vera => VERA,
            Trainer::Pcd => PCD,
            Trainer::Mle => MLE,
            Trainer::JemSsl => JEM,
        }
    }

    fn accepts(self, key: &str) -> bool {
        COMMON.contains(&key)
            || self.keys().contains(&key)
            || (self == Trainer::JemSsl && Trainer::Vera.keys().contains(&key))
    }
}

impl FromStr for Trainer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vera" => Ok(Trainer::Vera),
            "pcd" => Ok(Trainer::Pcd),
            "mle" => Ok(Trainer::Mle),
            "jem-ssl" => Ok(Trainer::JemSsl),
            o => Err(bad(format!("`trainer` must be vera, pcd, mle or jem-ssl, got `{o}`"))),
        }
    }
}

const COMMON: &[&str] = &[
    "trainer",
    "data",
    "data.n",
    "data.test_n",
    "data.noise",
    "data.dim",
    "data.separation",
    "data.path",
    "data.label",
    "data.scaling",
    "model",
    "model.components",
    "model.hidden",
    "model.layers",
    "seed",
    "steps",
    "batch_size",
    "checkpoint_every",
    "eval_every",
];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Toy { kind: ToyKind, noise: f64 },
    Blobs { dim: usize, separation: f64 },
    Csv { path: String, label: String, scaling: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub n: usize,
    pub test_n: usize,
}

impl DataConfig {
    pub fn dim(&self) -> Option<usize> {
        match &self.source {
            DataSource::Toy { .. } => Some(2),
            DataSource::Blobs { dim, .. } => Some(*dim),
            DataSource::Csv { .. } => None,
        }
    }
}

/// Trainer-specific settings.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainerConfig {
    Vera(VeraConfig),
    Pcd(PcdConfig),
    Mle(MleConfig),
    JemSsl {
        cfg: JemSslConfig,
        validation: f64,
        per_class: usize,
    },
}

/// Model family as named in the config; dimensions are filled in once the
/// data is loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelChoice {
    pub family: String,
    pub components: usize,
    pub hidden: Vec<usize>,
    pub layers: usize,
}

impl ModelChoice {
    pub fn spec(&self, dim: usize, classes: usize) -> Result<EnergySpec> {
        Ok(match self.family.as_str() {
            "quadratic" => EnergySpec::Quadratic { dim },
            "mog" => EnergySpec::Mog {
                dim,
                components: self.components,
            },
            "mlp" => EnergySpec::Mlp {
                dim,
                hidden: self.hidden.clone(),
            },
            "nice" => EnergySpec::Nice {
                dim,
                layers: self.layers,
                hidden: self.hidden.clone(),
            },
            "jem" => EnergySpec::Jem {
                dim,
                classes,
                hidden: self.hidden.clone(),
            },
            o => return Err(bad(format!("`model` must be quadratic, mog, mlp, nice or jem, got `{o}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorChoice {
    pub arch: String,
    pub latent: Option<usize>,
    pub hidden: Vec<usize>,
}

impl GeneratorChoice {
    pub fn spec(&self, dim: usize) -> Result<GeneratorSpec> {
        let latent = self.latent.unwrap_or(default_latent(dim));
        Ok(match self.arch.as_str() {
            "mlp" => GeneratorSpec::Mlp {
                latent,
                dim,
                hidden: self.hidden.clone(),
            },
            "linear" => GeneratorSpec::Linear { latent, dim },
            o => return Err(bad(format!("`generator` must be mlp or linear, got `{o}`"))),
        })
    }
}

fn default_latent(dim: usize) -> usize {
    if dim <= 2 {
        dim
    } else {
        dim.div_ceil(2)
    }
}

/// A fully typed run description.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub trainer: Trainer,
    pub data: DataConfig,
    pub model: ModelChoice,
    pub generator: Option<GeneratorChoice>,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub checkpoint_every: u64,
    pub eval_every: u64,
    pub settings: TrainerConfig,
    /// Every key with its resolved value.
    pub resolved: KeyValues,
}

/// Reads typed values while recording what was used, so the resolved map
/// lists defaults as well as explicit settings.
struct Reader<'a> {
    raw: &'a KeyValues,
    out: KeyValues,
}

impl Reader<'_> {
    fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw.get(key) {
            None => Ok(None),
            Some(v) => {
                let t = v
                    .parse()
                    .map_err(|_| bad(format!("`{key}` has an invalid value `{v}`")))?;
                self.out.set(key, v)?;
                Ok(Some(t))
            }
        }
    }

    fn req<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.opt(key)?
            .ok_or_else(|| bad(format!("missing required key `{key}`")))
    }

    fn or<T: FromStr + ToString>(&mut self, key: &str, default: T) -> Result<T> {
        match self.opt(key)? {
            Some(v) => Ok(v),
            None => {
                self.out.set(key, default.to_string())?;
                Ok(default)
            }
        }
    }

    fn list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        let text = match self.raw.get(key) {
            Some(v) => v.to_string(),
            None => join(default),
        };
        let parsed = if text.is_empty() {
            Ok(Vec::new())
        } else {
            text.split(',').map(|s| s.trim().parse::<usize>()).collect()
        };
        let v = parsed.map_err(|_| bad(format!("`{key}` must be a comma-separated list of sizes, got `{text}`")))?;
        self.out.set(key, join(&v))?;
        Ok(v)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_kv(raw: &KeyValues) -> Result<Self> {
        let mut r = Reader { raw, out: KeyValues::new() };
        let trainer: Trainer = r.req("trainer")?;
        if let Some((k, _)) = raw.iter().find(|(k, _)| !trainer.accepts(k)) {
            let known = COMMON.contains(&k) || [Trainer::Vera, Trainer::Pcd, Trainer::Mle, Trainer::JemSsl]
                .iter()
                .any(|t| t.accepts(k));
            return Err(bad(if known {
                format!("key `{k}` does not apply to the {} trainer", trainer.name())
            } else {
                format!("unknown config key `{k}`")
            }));
        }

        let data_name: String = r.req("data")?;
        let source = match data_name.as_str() {
            "moons" | "circles" | "rings" => DataSource::Toy {
                kind: data_name.parse()?,
                noise: r.or("data.noise", 0.1)?,
            },
            "blobs" => DataSource::Blobs {
                dim: r.or("data.dim", 10)?,
                separation: r.or("data.separation", 3.0)?,
            },
            "csv" => DataSource::Csv {
                path: r.req("data.path")?,
                label: r.or("data.label", "label".to_string())?,
                scaling: r.or("data.scaling", "zscore".to_string())?,
            },
            o => return Err(bad(format!("`data` must be moons, circles, rings, blobs or csv, got `{o}`"))),
        };
        let synthetic = !matches!(source, DataSource::Csv { .. });
        let data = DataConfig {
            source,
            n: if synthetic { r.or("data.n", 5000)? } else { 0 },
            test_n: if synthetic && trainer != Trainer::JemSsl { r.or("data.test_n", 2000)? } else { 0 },
        };
        if synthetic && data.n == 0 {
            return Err(bad("`data.n` must be >= 1"));
        }

        let default_family = if trainer == Trainer::JemSsl { "jem" } else { "mog" };
        let family: String = r.or("model", default_family.to_string())?;
        let model = ModelChoice {
            components: if family == "mog" { r.or("model.components", 100)? } else { 0 },
            hidden: if matches!(family.as_str(), "mlp" | "nice" | "jem") {
                r.list("model.hidden", &[64, 64])?
            } else {
                Vec::new()
            },
            layers: if family == "nice" { r.or("model.layers", 4)? } else { 0 },
            family,
        };
        if trainer == Trainer::Mle && !matches!(model.family.as_str(), "mog" | "nice") {
            return Err(bad(format!("`model` must be mog or nice for the mle trainer, got `{}`", model.family)));
        }
        if trainer == Trainer::JemSsl && model.family != "jem" {
            return Err(bad(format!("`model` must be jem for the jem-ssl trainer, got `{}`", model.family)));
        }

        let seed = r.or("seed", 0u64)?;
        let steps = r.or("steps", 1000u64)?;
        let batch_size = r.or("batch_size", 64usize)?;
        let checkpoint_every = r.or("checkpoint_every", 0u64)?;
        let eval_every = r.or("eval_every", 0u64)?;
        if batch_size == 0 {
            return Err(bad("`batch_size` must be >= 1"));
        }

        let generator = match trainer {
            Trainer::Vera | Trainer::JemSsl => Some(GeneratorChoice {
                arch: r.or("generator", "mlp".to_string())?,
                latent: r.opt("generator.latent")?,
                hidden: r.list("generator.hidden", &[100, 100])?,
            }),
            _ => None,
        };

        let settings = match trainer {
            Trainer::Vera => TrainerConfig::Vera(read_vera(&mut r, VeraConfig::default(), batch_size, steps)?),
            Trainer::JemSsl => {
                let d = JemSslConfig::default();
                let cfg = JemSslConfig {
                    alpha: r.or("alpha", d.alpha)?,
                    beta: r.or("beta", d.beta)?,
                    unconditional: r.or("unconditional", d.unconditional)?,
                    labeled_batch: r.or("labeled_batch", d.labeled_batch)?,
                    unlabeled_batch: r.or("unlabeled_batch", d.unlabeled_batch)?,
                    vera: read_vera(&mut r, d.vera, batch_size, steps)?,
                };
                cfg.validate()?;
                TrainerConfig::JemSsl {
                    cfg,
                    validation: r.or("split.validation", 0.1)?,
                    per_class: r.or("split.per_class", 10)?,
                }
            }
            Trainer::Pcd => {
                let d = PcdConfig::default();
                let cfg = PcdConfig {
                    sgld: SgldConfig {
                        step: r.or("sgld_step", d.sgld.step)?,
                        steps: r.or("sgld_steps", d.sgld.steps)?,
                        noise: r.or("sgld_noise", d.sgld.noise)?,
                    },
                    buffer_size: r.or("buffer_size", d.buffer_size)?,
                    reinit: r.or("reinit", d.reinit)?,
                    lr: r.or("lr_energy", d.lr)?,
                    beta1: r.or("beta1", d.beta1)?,
                    beta2: r.or("beta2", d.beta2)?,
                    gamma: r.or("gamma", d.gamma)?,
                    batch_size,
                    steps,
                    divergence_bound: r.or("divergence_bound", d.divergence_bound)?,
                };
                cfg.validate()?;
                TrainerConfig::Pcd(cfg)
            }
            Trainer::Mle => {
                let d = MleConfig::default();
                let cfg = MleConfig {
                    lr: r.or("lr_energy", d.lr)?,
                    beta1: r.or("beta1", d.beta1)?,
                    beta2: r.or("beta2", d.beta2)?,
                    batch_size,
                    steps,
                };
                cfg.validate()?;
                TrainerConfig::Mle(cfg)
            }
        };

        Ok(Self {
            trainer,
            data,
            model,
            generator,
            seed,
            steps,
            batch_size,
            checkpoint_every,
            eval_every,
            settings,
            resolved: r.out,
        })
    }
}

fn read_vera(r: &mut Reader<'_>, d: VeraConfig, batch_size: usize, steps: u64) -> Result<VeraConfig> {
    let decay_to: Option<f64> = r.opt("lambda_decay_to")?;
    let decay_over: Option<u64> = r.opt("lambda_decay_over")?;
    let lambda_decay = match (decay_to, decay_over) {
        (None, None) => None,
        (Some(to), Some(over)) => Some(LambdaDecay { to, over }),
        (Some(_), None) => return Err(bad("missing required key `lambda_decay_over`")),
        (None, Some(_)) => return Err(bad("missing required key `lambda_decay_to`")),
    };
    let cfg = VeraConfig {
        lambda: r.or("lambda", d.lambda)?,
        lambda_decay,
        gamma: r.or("gamma", d.gamma)?,
        k: r.or("k", d.k)?,
        elbo_samples: r.or("elbo_samples", d.elbo_samples)?,
        lr_energy: r.or("lr_energy", d.lr_energy)?,
        lr_generator: r.or("lr_generator", d.lr_generator)?,
        lr_posterior: r.or("lr_posterior", d.lr_posterior)?,
        beta1: r.or("beta1", d.beta1)?,
        beta2: r.or("beta2", d.beta2)?,
        batch_size,
        steps,
        eta_init: r.or("eta_init", d.eta_init)?,
        per_dim_eta: r.or("per_dim_eta", d.per_dim_eta)?,
        divergence_bound: r.or("divergence_bound", d.divergence_bound)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> KeyValues {
        let mut k = KeyValues::new();
        for (a, b) in pairs {
            k.set(a, *b).unwrap();
        }
        k
    }

    #[test]
    fn file_syntax_and_overrides() {
        let mut k = KeyValues::parse("# run\ntrainer = vera\n\ndata=moons # toy\nlambda = 1\n").unwrap();
        assert_eq!(k.get("data"), Some("moons"));
        k.set_pair("lambda=0").unwrap();
        assert_eq!(k.get("lambda"), Some("0"));
        assert!(KeyValues::parse("no equals sign").is_err());
        assert!(k.set_pair("novalue").is_err());
    }

    #[test]
    fn resolution_fills_defaults_and_keeps_explicit_text() {
        let c = RunConfig::from_kv(&kv(&[("trainer", "vera"), ("data", "moons"), ("lambda", "0")])).unwrap();
        assert_eq!(c.resolved.get("lambda"), Some("0"));
        assert_eq!(c.resolved.get("gamma"), Some("0.1"));
        assert_eq!(c.resolved.get("model.components"), Some("100"));
        let TrainerConfig::Vera(v) = &c.settings else { panic!() };
        assert_eq!(v.lambda, 0.0);
        // The resolved map replays to itself.
        let again = RunConfig::from_kv(&c.resolved).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_name_the_key() {
        let msg = |pairs: &[(&str, &str)]| RunConfig::from_kv(&kv(pairs)).unwrap_err().to_string();
        assert!(msg(&[("data", "moons")]).contains("`trainer`"));
        assert!(msg(&[("trainer", "vera")]).contains("`data`"));
        assert!(msg(&[("trainer", "vera"), ("data", "moons"), ("lamda", "1")]).contains("`lamda`"));
        assert!(msg(&[("trainer", "mle"), ("data", "moons"), ("lambda", "1")]).contains("does not apply"));
        assert!(msg(&[("trainer", "vera"), ("data", "moons"), ("k", "x")]).contains("`k`"));
        assert!(msg(&[("trainer", "vera"), ("data", "moons"), ("gamma", "-1")]).contains("`gamma`"));
        assert!(msg(&[("trainer", "mle"), ("data", "moons"), ("model", "mlp")]).contains("`model`"));
    }

    #[test]
    fn size_lists_round_trip() {
        let c = RunConfig::from_kv(&kv(&[
            ("trainer", "pcd"),
            ("data", "blobs"),
            ("model", "mlp"),
            ("model.hidden", "8, 4"),
        ]))
        .unwrap();
        assert_eq!(c.model.hidden, [8, 4]);
        assert_eq!(c.resolved.get("model.hidden"), Some("8,4"));
        assert_eq!(c.model.spec(10, 2).unwrap(), EnergySpec::Mlp { dim: 10, hidden: vec![8, 4] });
    }
}
