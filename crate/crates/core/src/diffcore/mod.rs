//! Reverse-mode automatic differentiation over dense matrices, with the
//! layers and optimizer the models are built from.
//!
//! Noise never originates inside a graph: stochastic quantities are bound as
//! inputs, so reparameterized gradients are ordinary backward passes.

mod adam;
mod gradcheck;
mod graph;
mod kernels;
mod nn;
mod op;
mod params;
mod vjp;

use std::collections::BTreeMap;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{finite_difference_check, FdReport};
pub use graph::{Bindings, Graph, Node, NodeId, StaticShape, Values};
pub use kernels::{logsumexp, sigmoid, softplus};
pub use nn::{Activation, Mlp};
pub use op::{Op, LEAKY_SLOPE};
pub use params::ParamSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Evaluate `outputs` and return their values in order.
pub fn eval_forward(graph: &Graph, bind: &Bindings<'_>, outputs: &[NodeId]) -> Result<Vec<Tensor>> {
    let vals = graph.eval(bind, outputs)?;
    Ok(outputs.iter().map(|o| vals.get(*o).clone()).collect())
}

/// Gradients of one output with respect to every parameter and input leaf
/// it depends on.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub params: ParamSet,
    pub inputs: BTreeMap<String, Tensor>,
}

/// Backward pass from `output`. A non-scalar output needs an explicit
/// `cotangent` of the same shape (a vector-Jacobian product).
pub fn grad_backward(
    graph: &Graph,
    bind: &Bindings<'_>,
    output: NodeId,
    cotangent: Option<&Tensor>,
) -> Result<Gradients> {
    let vals = graph.eval(bind, &[output])?;
    let y = vals.get(output);
    let one = Tensor::scalar(1.0);
    let seed = match cotangent {
        Some(c) => c,
        None if y.shape() == [1, 1] => &one,
        None => return Err(Error::NonScalarOutput { shape: y.shape() }),
    };
    let leaves: Vec<(bool, String, NodeId)> = graph
        .param_nodes()
        .iter()
        .map(|(n, id)| (true, n.clone(), *id))
        .chain(graph.input_nodes().iter().map(|(n, id)| (false, n.clone(), *id)))
        .filter(|(_, _, id)| vals.try_get(*id).is_some())
        .collect();
    let ids: Vec<NodeId> = leaves.iter().map(|l| l.2).collect();
    let grads = graph.backward(&vals, &[(output, seed)], &ids)?;
    let mut out = Gradients::default();
    for ((is_param, name, _), g) in leaves.into_iter().zip(grads) {
        if is_param {
            out.params.insert(name, g);
        } else {
            out.inputs.insert(name, g);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
