use super::graph::{Bindings, Graph, NodeId, Values};
use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Max of `|a - n| / (|a| + |n| + 1e-12)` over checked entries.
    pub max_rel_error: f64,
    /// Parameter entry attaining `max_rel_error`.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries whose `±h` perturbation crosses a ReLU-family kink.
    pub excluded_nonsmooth: usize,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Sign pattern of every kinked op's argument that was evaluated.
fn kink_pattern(graph: &Graph, vals: &Values) -> Vec<bool> {
    let mut out = Vec::new();
    for (_, node) in graph.nodes() {
        if node.op.has_kink() {
            if let Some(t) = vals.try_get(node.args[0]) {
                out.extend(t.data().iter().map(|&v| v >= 0.0));
            }
        }
    }
    out
}

/// Compare reverse-mode parameter gradients of the scalar `output` with
/// central differences of step `h`.
pub fn finite_difference_check(
    graph: &Graph,
    params: &ParamSet,
    inputs: &[(&str, &Tensor)],
    output: NodeId,
    h: f64,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {h}")));
    }
    let bind = |p: &ParamSet| -> Result<Values> {
        let mut b = Bindings::new().params(p);
        for (n, t) in inputs {
            b = b.input(n, t);
        }
        graph.eval(&b, &[output])
    };

    let base = bind(params)?;
    let names: Vec<String> = graph
        .param_nodes()
        .iter()
        .filter(|(_, id)| base.try_get(**id).is_some())
        .map(|(n, _)| n.clone())
        .collect();
    let ids: Vec<NodeId> = names.iter().map(|n| graph.param_id(n).unwrap()).collect();
    let analytic = graph.grad_scalar(&base, output, &ids)?;

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded_nonsmooth: 0,
    };
    let mut work = params.clone();
    for (name, grad) in names.iter().zip(&analytic) {
        for idx in 0..grad.len() {
            let orig = work.get(name).unwrap().data()[idx];
            work.get_mut(name).unwrap().data_mut()[idx] = orig + h;
            let plus = bind(&work)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig - h;
            let minus = bind(&work)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig;

            if kink_pattern(graph, &plus) != kink_pattern(graph, &minus) {
                report.excluded_nonsmooth += 1;
                continue;
            }
            let numeric = (plus.get(output).item() - minus.get(output).item()) / (2.0 * h);
            let a = grad.data()[idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}
