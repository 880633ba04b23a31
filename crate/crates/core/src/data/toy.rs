use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two-dimensional toy distributions. Points are split as evenly as
/// possible between the components; labels give the component.
///
/// * moons: `(cos t, sin t)` and `(1 - cos t, 0.5 - sin t)`, `t ~ U[0, pi]`
/// * circles: radii 1 and 2
/// * rings: radii 1, 2, 3 and 4
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyKind {
    Moons,
    Circles,
    Rings,
}

impl ToyKind {
    pub fn components(self) -> usize {
        match self {
            ToyKind::Moons | ToyKind::Circles => 2,
            ToyKind::Rings => 4,
        }
    }
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" => Ok(ToyKind::Moons),
            "circles" => Ok(ToyKind::Circles),
            "rings" => Ok(ToyKind::Rings),
            other => Err(Error::invalid(format!(
                "unknown toy dataset `{other}` (expected moons, circles or rings)"
            ))),
        }
    }
}

pub fn make_toy(kind: ToyKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("toy dataset needs n >= 1"));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid(format!("noise scale must be >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = kind.components();
    let mut x = Tensor::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i * k / n;
        let (px, py) = match kind {
            ToyKind::Moons => {
                let t = PI * rng.random::<f64>();
                if c == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                }
            }
            ToyKind::Circles | ToyKind::Rings => {
                let t = 2.0 * PI * rng.random::<f64>();
                let r = (c + 1) as f64;
                (r * t.cos(), r * t.sin())
            }
        };
        let e = Tensor::randn(1, 2, &mut rng);
        x.set(i, 0, px + noise * e.get(0, 0));
        x.set(i, 1, py + noise * e.get(0, 1));
        labels.push(c);
    }
    Dataset::new(x, Some(labels))
}

/// Two unit-variance Gaussian classes in `dim` dimensions whose means sit at
/// `-separation / 2` and `+separation / 2` on the first axis. Classes split
/// the rows as evenly as possible, class 0 first.
pub fn make_blobs(n: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::invalid("blobs need n >= 1 and dim >= 1"));
    }
    if !separation.is_finite() {
        return Err(Error::invalid(format!("separation must be finite, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Tensor::randn(n, dim, &mut rng);
    let labels: Vec<usize> = (0..n).map(|i| i * 2 / n).collect();
    for (i, &c) in labels.iter().enumerate() {
        let shift = if c == 0 { -0.5 } else { 0.5 } * separation;
        x.set(i, 0, x.get(i, 0) + shift);
    }
    Dataset::new(x, Some(labels))
}
