//! Datasets: 2-D toy sets, linear-Gaussian instances, tabular CSV ingestion
//! and semi-supervised splits.

mod linear;
mod split;
mod tabular;
mod toy;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::Container;
use crate::diffcore::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use linear::{fit_linear_gaussian, make_linear_gaussian};
pub use split::{split_ssl, SplitSpec, SslSplit};
pub use tabular::{load_tabular, read_tabular, Scaling, TabularRules};
pub use toy::{make_blobs, make_toy, ToyKind};

/// Why a raw column was removed during ingestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The modal value occurred this many times.
    Repeats(usize),
    /// Covariation with an earlier kept column exceeded the threshold.
    Covariation { with: String, value: f64 },
}

/// Per-feature affine map `normalized = (raw - shift) / scale`, plus the
/// columns that ingestion dropped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    pub dropped: Vec<(String, DropReason)>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
            dropped: Vec::new(),
        }
    }

    pub fn apply(&self, raw: &Tensor) -> Tensor {
        let mut out = raw.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.shift[c]) / self.scale[c];
            }
        }
        out
    }

    pub fn invert(&self, normalized: &Tensor) -> Tensor {
        let mut out = normalized.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.scale[c] + self.shift[c];
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Option<Vec<usize>>,
    pub names: Vec<String>,
    pub norm: Normalization,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::invalid(format!(
                    "{} labels for {} rows",
                    l.len(),
                    features.rows()
                )));
            }
        }
        if !features.is_finite() {
            return Err(Error::non_finite("dataset features"));
        }
        let names = (0..features.cols()).map(|c| format!("x{c}")).collect();
        let norm = Normalization::identity(features.cols());
        Ok(Self {
            features,
            labels,
            names,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes, `max label + 1`.
    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|i| l[*i]).collect()),
            names: self.names.clone(),
            norm: self.norm.clone(),
        }
    }

    /// One-hot label matrix with `classes` columns.
    pub fn one_hot(&self, classes: usize) -> Result<Tensor> {
        let l = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no labels"))?;
        let mut t = Tensor::zeros(l.len(), classes);
        for (r, &c) in l.iter().enumerate() {
            if c >= classes {
                return Err(Error::invalid(format!("label {c} at row {r} >= {classes} classes")));
            }
            t.set(r, c, 1.0);
        }
        Ok(t)
    }

    /// Features mapped back to raw units.
    pub fn raw_features(&self) -> Tensor {
        self.norm.invert(&self.features)
    }

    pub fn to_container(&self) -> Container {
        let mut arrays = ParamSet::new();
        arrays.insert("features", self.features.clone());
        Container::new(
            json!({
                "kind": "dataset",
                "labels": self.labels,
                "names": self.names,
                "norm": self.norm,
            }),
            arrays,
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind() != Some("dataset") {
            return Err(Error::Format(format!("expected a dataset, found kind {:?}", c.kind())));
        }
        let field = |k: &str| {
            c.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("dataset container without `{k}`")))
        };
        Ok(Self {
            features: c.arrays.require("features")?.clone(),
            labels: serde_json::from_value(field("labels")?)?,
            names: serde_json::from_value(field("names")?)?,
            norm: serde_json::from_value(field("norm")?)?,
        })
    }
}
