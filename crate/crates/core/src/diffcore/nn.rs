//! Fully connected layers built on [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, NodeId};
use super::op::LEAKY_SLOPE;
use super::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Softplus,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
            Activation::Relu => g.relu(x),
            Activation::Softplus => g.softplus(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Multi-layer perceptron `sizes[0] -> ... -> sizes[last]` with the
/// activation between layers and a linear output. Parameters are named
/// `{prefix}.{i}.weight` (`in x out`) and `{prefix}.{i}.bias` (`1 x out`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub prefix: String,
    pub sizes: Vec<usize>,
    pub act: Activation,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, sizes: &[usize], act: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            prefix: prefix.into(),
            sizes: sizes.to_vec(),
            act,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.{layer}.weight", self.prefix)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.{layer}.bias", self.prefix)
    }

    pub fn build(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let mut h = x;
        for i in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            let w = g.param(&self.weight_name(i), fan_in, fan_out);
            let b = g.param(&self.bias_name(i), 1, fan_out);
            h = g.affine(h, w, b);
            if i + 1 < self.num_layers() {
                h = self.act.apply(g, h);
            }
        }
        h
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization for
    /// weights and biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut p = ParamSet::new();
        for i in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[i], self.sizes[i + 1]);
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let mut draw = |r: usize, c: usize| {
                let data = (0..r * c)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Tensor::from_parts(r, c, data)
            };
            let w = draw(fan_in, fan_out);
            let b = draw(1, fan_out);
            p.insert(self.weight_name(i), w);
            p.insert(self.bias_name(i), b);
        }
        p
    }

    /// Zero the output layer so the network starts as the zero function.
    pub fn zero_last(&self, params: &mut ParamSet) {
        let last = self.num_layers() - 1;
        for name in [self.weight_name(last), self.bias_name(last)] {
            if let Some(t) = params.get_mut(&name) {
                t.data_mut().fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Bindings;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_identity_passes_input_through() {
        let mut g = Graph::new();
        let x = g.input("x", 2);
        let mlp = Mlp::new("l", &[2, 2], Activation::LeakyRelu);
        let y = mlp.build(&mut g, x);
        let mut p = ParamSet::new();
        p.insert("l.0.weight", Tensor::identity(2));
        p.insert("l.0.bias", Tensor::zeros(1, 2));
        let xv = Tensor::row_vector(&[1.0, 2.0]);
        let vals = g.eval(&Bindings::new().params(&p).input("x", &xv), &[y]).unwrap();
        assert_eq!(vals.get(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn init_shapes_and_bounds() {
        let mlp = Mlp::new("m", &[3, 5, 1], Activation::Softplus);
        let p = mlp.init(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.len(), 4);
        assert_eq!(p.get("m.0.weight").unwrap().shape(), [3, 5]);
        assert_eq!(p.get("m.1.bias").unwrap().shape(), [1, 1]);
        let bound = 1.0 / 3f64.sqrt();
        assert!(p.get("m.0.weight").unwrap().data().iter().all(|v| v.abs() < bound));
    }
}
