//! Energy families `f(x)`, the unnormalized log-density of `p(x) ∝ exp f(x)`.
//!
//! Every family compiles to one [`EnergyGraph`] holding `f`, its input
//! gradient and the squared input-gradient norm, so samplers, trainers and
//! the gradient penalty all share a single graph.

mod build;
mod grid;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use build::EnergyGraph;
pub use grid::{grid_log_density, grid_log_partition, GridSpec};

use crate::container::Container;
use crate::diffcore::{Bindings, Graph, NodeId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EnergySpec {
    /// `f(x) = -||x - mu||^2 / (2 s^2)`.
    Quadratic { dim: usize },
    /// Normalized diagonal Gaussian mixture.
    Mog { dim: usize, components: usize },
    /// Scalar-output MLP with leaky-ReLU hidden layers.
    Mlp { dim: usize, hidden: Vec<usize> },
    /// Additive-coupling flow with a final diagonal scale.
    Nice {
        dim: usize,
        layers: usize,
        hidden: Vec<usize>,
    },
    /// `classes` logits; `f(x) = logsumexp(logits)`.
    Jem {
        dim: usize,
        classes: usize,
        hidden: Vec<usize>,
    },
}

impl EnergySpec {
    pub fn dim(&self) -> usize {
        match self {
            EnergySpec::Quadratic { dim }
            | EnergySpec::Mog { dim, .. }
            | EnergySpec::Mlp { dim, .. }
            | EnergySpec::Nice { dim, .. }
            | EnergySpec::Jem { dim, .. } => *dim,
        }
    }

    /// Families whose `f` is an exact normalized log-density.
    pub fn is_normalized(&self) -> bool {
        matches!(self, EnergySpec::Mog { .. } | EnergySpec::Nice { .. })
    }

    pub fn family(&self) -> &'static str {
        match self {
            EnergySpec::Quadratic { .. } => "quadratic",
            EnergySpec::Mog { .. } => "mog",
            EnergySpec::Mlp { .. } => "mlp",
            EnergySpec::Nice { .. } => "nice",
            EnergySpec::Jem { .. } => "jem",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        match self {
            _ if self.dim() == 0 => bad("energy dimension must be >= 1".into()),
            EnergySpec::Mog { components: 0, .. } => bad("mixture needs >= 1 component".into()),
            EnergySpec::Nice { dim, .. } if *dim < 2 => {
                bad(format!("coupling flow needs dim >= 2, got {dim}"))
            }
            EnergySpec::Jem { classes, .. } if *classes < 2 => {
                bad(format!("classifier needs >= 2 classes, got {classes}"))
            }
            _ => Ok(()),
        }
    }
}

/// Named outputs of an energy graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnergyNode {
    F,
    GradX,
    Pen,
    Logits,
    CrossEntropy,
    PredEntropy,
}

#[derive(Clone, Debug)]
pub struct JemOutputs {
    pub logits: Tensor,
    /// `logsumexp` of the logits, one per row.
    pub marginal: Vec<f64>,
    pub posterior: Tensor,
}

#[derive(Clone, Debug)]
pub struct EnergyModel {
    spec: EnergySpec,
    params: ParamSet,
    eg: EnergyGraph,
    inverse: Option<(Graph, NodeId, NodeId)>,
}

impl EnergyModel {
    /// Build `spec` with freshly initialized parameters. Flows start at the
    /// identity map; mixtures start with standard-normal means, unit scales
    /// and uniform weights.
    pub fn new<R: Rng + ?Sized>(spec: EnergySpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let params = init_params(&spec, rng);
        Self::from_params(spec, params)
    }

    pub fn from_params(spec: EnergySpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let eg = build::build(&spec);
        for (name, id) in eg.graph.param_nodes() {
            let node = eg.graph.node(*id);
            let want = [node.shape.rows.unwrap(), node.shape.cols.unwrap()];
            let got = params.require(name)?.shape();
            if got != want {
                return Err(Error::invalid(format!(
                    "parameter `{name}` has shape {got:?}, expected {want:?}"
                )));
            }
        }
        let inverse = match &spec {
            EnergySpec::Nice {
                dim,
                layers,
                hidden,
            } => {
                let mut g = Graph::new();
                let u = g.input("u", *dim);
                let x = build::nice_inverse(&mut g, u, *dim, *layers, hidden);
                Some((g, u, x))
            }
            _ => None,
        };
        Ok(Self {
            spec,
            params,
            eg,
            inverse,
        })
    }

    pub fn quadratic(mu: &[f64], s: f64) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::invalid(format!("quadratic scale must be > 0, got {s}")));
        }
        let mut p = ParamSet::new();
        p.insert("quad.mu", Tensor::row_vector(mu));
        p.insert("quad.log_s", Tensor::scalar(s.ln()));
        Self::from_params(EnergySpec::Quadratic { dim: mu.len() }, p)
    }

    /// Mixture from explicit means and log-scales (`M x D`) and logits (`M`).
    pub fn mog(means: Tensor, log_scales: Tensor, logits: &[f64]) -> Result<Self> {
        let spec = EnergySpec::Mog {
            dim: means.cols(),
            components: means.rows(),
        };
        let mut p = ParamSet::new();
        p.insert("mog.means", means);
        p.insert("mog.log_scales", log_scales);
        p.insert("mog.logits", Tensor::row_vector(logits));
        Self::from_params(spec, p)
    }

    pub fn spec(&self) -> &EnergySpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn energy_graph(&self) -> &EnergyGraph {
        &self.eg
    }

    fn node(&self, which: EnergyNode) -> Result<NodeId> {
        let missing = || {
            Error::Unsupported(format!(
                "{which:?} is not defined for the {} family",
                self.spec.family()
            ))
        };
        Ok(match which {
            EnergyNode::F => self.eg.f,
            EnergyNode::GradX => self.eg.grad_x,
            EnergyNode::Pen => self.eg.pen,
            EnergyNode::Logits => self.eg.logits.ok_or_else(missing)?,
            EnergyNode::CrossEntropy => self.eg.ce.ok_or_else(missing)?,
            EnergyNode::PredEntropy => self.eg.ent.ok_or_else(missing)?,
        })
    }

    fn check_x(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::invalid(format!(
                "energy expects {} columns, got {}",
                self.dim(),
                x.cols()
            )));
        }
        if !x.is_finite() {
            return Err(Error::non_finite("energy input"));
        }
        Ok(())
    }

    fn bindings<'a>(&'a self, x: &'a Tensor, y: Option<&'a Tensor>) -> Bindings<'a> {
        let mut b = Bindings::new().params(&self.params).input("x", x);
        if let Some(y) = y {
            b = b.input("y", y);
        }
        b
    }

    /// Evaluate the requested outputs on `x` (and one-hot `y` for the
    /// classifier losses). Non-finite results are errors.
    pub fn eval(&self, x: &Tensor, y: Option<&Tensor>, which: &[EnergyNode]) -> Result<Vec<Tensor>> {
        self.check_x(x)?;
        let ids = which.iter().map(|w| self.node(*w)).collect::<Result<Vec<_>>>()?;
        let vals = self.eg.graph.eval(&self.bindings(x, y), &ids)?;
        ids.iter()
            .zip(which)
            .map(|(id, w)| {
                let t = vals.get(*id);
                if t.is_finite() {
                    Ok(t.clone())
                } else {
                    Err(Error::non_finite(format!("energy output {w:?}")))
                }
            })
            .collect()
    }

    /// `f(x)` per row.
    pub fn energy(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.eval(x, None, &[EnergyNode::F])?.remove(0).into_data())
    }

    /// `grad_x f(x)`, one row per input row.
    pub fn grad_x(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.eval(x, None, &[EnergyNode::GradX])?.remove(0))
    }

    pub fn energy_and_grad(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let mut v = self.eval(x, None, &[EnergyNode::F, EnergyNode::GradX])?;
        let g = v.pop().unwrap();
        Ok((v.pop().unwrap().into_data(), g))
    }

    /// Parameter gradient of `sum_i sum_j seed_j[i] * node_j(x)[i]`, with
    /// every seed an `n x 1` column (or `n x D` for `GradX`).
    pub fn param_grad(
        &self,
        x: &Tensor,
        y: Option<&Tensor>,
        seeds: &[(EnergyNode, &Tensor)],
    ) -> Result<ParamSet> {
        self.check_x(x)?;
        let ids = seeds
            .iter()
            .map(|(w, _)| self.node(*w))
            .collect::<Result<Vec<_>>>()?;
        let vals = self.eg.graph.eval(&self.bindings(x, y), &ids)?;
        let s: Vec<(NodeId, &Tensor)> = ids.iter().copied().zip(seeds.iter().map(|s| s.1)).collect();
        let grads = self.eg.graph.param_grads(&vals, &s)?;
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::non_finite(format!("gradient of `{name}`")));
            }
        }
        Ok(grads)
    }

    /// `log Z` where known in closed form: `(D/2) ln(2 pi s^2)` for the
    /// quadratic family and 0 for normalized families.
    pub fn log_partition_analytic(&self) -> Result<f64> {
        match &self.spec {
            EnergySpec::Quadratic { dim } => {
                let ls = self.params.require("quad.log_s")?.item();
                Ok(0.5 * *dim as f64 * ((2.0 * PI).ln() + 2.0 * ls))
            }
            s if s.is_normalized() => Ok(0.0),
            s => Err(Error::Unsupported(format!(
                "no analytic log-partition for the {} family",
                s.family()
            ))),
        }
    }

    /// Exact log-density for normalized families.
    pub fn log_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        match &self.spec {
            EnergySpec::Quadratic { .. } => {
                let lz = self.log_partition_analytic()?;
                Ok(self.energy(x)?.into_iter().map(|f| f - lz).collect())
            }
            s if s.is_normalized() => self.energy(x),
            s => Err(Error::Unsupported(format!(
                "no exact likelihood for the {} family",
                s.family()
            ))),
        }
    }

    pub fn jem_outputs(&self, x: &Tensor) -> Result<JemOutputs> {
        let mut v = self.eval(x, None, &[EnergyNode::Logits, EnergyNode::F])?;
        let marginal = v.pop().unwrap().into_data();
        let logits = v.pop().unwrap();
        let mut posterior = logits.clone();
        for (r, m) in marginal.iter().enumerate() {
            for p in posterior.row_mut(r) {
                *p = (*p - m).exp();
            }
        }
        Ok(JemOutputs {
            logits,
            marginal,
            posterior,
        })
    }

    /// Predicted class per row (`argmax` of the logits).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.eval(x, None, &[EnergyNode::Logits])?.remove(0);
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                (0..row.len())
                    .fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }

    fn nice_parts(&self) -> Result<(usize, Vec<f64>)> {
        match &self.spec {
            EnergySpec::Nice { dim, .. } => Ok((
                *dim,
                self.params.require("nice.log_scale")?.data().to_vec(),
            )),
            s => Err(Error::Unsupported(format!("{} is not a flow", s.family()))),
        }
    }

    /// Flow forward map and its (input-independent) log-determinant.
    pub fn nice_forward(&self, x: &Tensor) -> Result<(Tensor, f64)> {
        let (_, s) = self.nice_parts()?;
        let EnergySpec::Nice {
            dim,
            layers,
            hidden,
        } = &self.spec
        else {
            unreachable!()
        };
        self.check_x(x)?;
        let mut g = Graph::new();
        let xi = g.input("x", *dim);
        let u = build::nice_forward(&mut g, xi, *dim, *layers, hidden);
        let vals = g.eval(&Bindings::new().params(&self.params).input("x", x), &[u])?;
        Ok((vals.get(u).clone(), s.iter().sum()))
    }

    pub fn nice_inverse(&self, u: &Tensor) -> Result<Tensor> {
        self.nice_parts()?;
        let (g, _, xo) = self.inverse.as_ref().expect("flows carry an inverse graph");
        let vals = g.eval(&Bindings::new().params(&self.params).input("u", u), &[*xo])?;
        Ok(vals.get(*xo).clone())
    }

    pub fn nice_log_prob(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.nice_parts()?;
        self.energy(x)
    }

    pub fn nice_sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        let (dim, _) = self.nice_parts()?;
        self.nice_inverse(&Tensor::randn(n, dim, rng))
    }

    /// Exact draws from a mixture.
    pub fn mog_sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        let EnergySpec::Mog { dim, components } = self.spec else {
            return Err(Error::Unsupported(format!("{} is not a mixture", self.spec.family())));
        };
        let mu = self.params.require("mog.means")?;
        let ls = self.params.require("mog.log_scales")?;
        let logits = self.params.require("mog.logits")?.data();
        let lse = crate::diffcore::logsumexp(logits);
        let w: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
        let mut out = Tensor::zeros(n, dim);
        for r in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = components - 1;
            for (j, wj) in w.iter().enumerate() {
                acc += wj;
                if u < acc {
                    k = j;
                    break;
                }
            }
            for d in 0..dim {
                let e: f64 = StandardNormal.sample(rng);
                out.set(r, d, mu.get(k, d) + ls.get(k, d).exp() * e);
            }
        }
        Ok(out)
    }

    pub fn to_container(&self) -> Container {
        Container::new(
            json!({"kind": "energy", "spec": self.spec}),
            self.params.clone(),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind() != Some("energy") {
            return Err(Error::Format(format!(
                "expected an energy checkpoint, found kind {:?}",
                c.kind()
            )));
        }
        let spec: EnergySpec = serde_json::from_value(
            c.meta
                .get("spec")
                .cloned()
                .ok_or_else(|| Error::Format("energy checkpoint without spec".into()))?,
        )?;
        Self::from_params(spec, c.arrays.clone())
    }
}

fn init_params<R: Rng + ?Sized>(spec: &EnergySpec, rng: &mut R) -> ParamSet {
    let mut p = ParamSet::new();
    match spec {
        EnergySpec::Quadratic { dim } => {
            p.insert("quad.mu", Tensor::zeros(1, *dim));
            p.insert("quad.log_s", Tensor::zeros(1, 1));
        }
        EnergySpec::Mog { dim, components } => {
            p.insert("mog.means", Tensor::randn(*components, *dim, rng));
            p.insert("mog.log_scales", Tensor::zeros(*components, *dim));
            p.insert("mog.logits", Tensor::zeros(1, *components));
        }
        EnergySpec::Mlp { .. } | EnergySpec::Jem { .. } => {
            p = build::body_mlp(spec).expect("mlp family").init(rng);
        }
        EnergySpec::Nice {
            dim,
            layers,
            hidden,
        } => {
            for l in 0..*layers {
                let mlp = build::conditioner(*dim, l, hidden);
                let mut lp = mlp.init(rng);
                mlp.zero_last(&mut lp);
                p.extend(lp);
            }
            p.insert("nice.log_scale", Tensor::zeros(1, *dim));
        }
    }
    p
}
