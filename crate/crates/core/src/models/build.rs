//! Graph construction for each energy family.

use std::f64::consts::PI;

use crate::diffcore::{Activation, Graph, Mlp, NodeId};

use super::EnergySpec;

/// Nodes of a built energy graph. `f`, `grad_x` and `pen` are per row.
#[derive(Clone, Debug)]
pub struct EnergyGraph {
    pub graph: Graph,
    pub x: NodeId,
    pub f: NodeId,
    pub grad_x: NodeId,
    /// `||grad_x f||^2` per row; differentiable in the parameters.
    pub pen: NodeId,
    pub logits: Option<NodeId>,
    /// One-hot labels input (classifier families only).
    pub y: Option<NodeId>,
    /// Per-row cross-entropy `-log p(y|x)`.
    pub ce: Option<NodeId>,
    /// Per-row predictive entropy `H(p(.|x))`.
    pub ent: Option<NodeId>,
}

pub(crate) fn half(dim: usize) -> usize {
    dim / 2
}

/// Ranges `(conditioning, transformed)` of coupling layer `l`.
pub(crate) fn coupling_split(dim: usize, l: usize) -> ((usize, usize), (usize, usize)) {
    let h = half(dim);
    if l.is_multiple_of(2) {
        ((0, h), (h, dim))
    } else {
        ((h, dim), (0, h))
    }
}

pub(crate) fn conditioner(dim: usize, l: usize, hidden: &[usize]) -> Mlp {
    let ((a0, a1), (b0, b1)) = coupling_split(dim, l);
    let mut sizes = vec![a1 - a0];
    sizes.extend_from_slice(hidden);
    sizes.push(b1 - b0);
    Mlp::new(format!("nice.{l}"), &sizes, Activation::Softplus)
}

/// Couple `v` through layer `l`, adding (`sign = 1`) or subtracting the
/// conditioner output.
fn couple(g: &mut Graph, v: NodeId, dim: usize, l: usize, hidden: &[usize], sign: f64) -> NodeId {
    let ((a0, a1), (b0, b1)) = coupling_split(dim, l);
    let xa = g.slice_cols(v, a0, a1);
    let xb = g.slice_cols(v, b0, b1);
    let m = conditioner(dim, l, hidden).build(g, xa);
    let yb = if sign > 0.0 { g.add(xb, m) } else { g.sub(xb, m) };
    if a0 == 0 {
        g.concat_cols(&[xa, yb])
    } else {
        g.concat_cols(&[yb, xa])
    }
}

/// NICE forward map `x -> u`.
pub(crate) fn nice_forward(g: &mut Graph, x: NodeId, dim: usize, layers: usize, hidden: &[usize]) -> NodeId {
    let mut v = x;
    for l in 0..layers {
        v = couple(g, v, dim, l, hidden, 1.0);
    }
    let s = g.param("nice.log_scale", 1, dim);
    let es = g.exp(s);
    g.mul(v, es)
}

/// NICE inverse map `u -> x`.
pub(crate) fn nice_inverse(g: &mut Graph, u: NodeId, dim: usize, layers: usize, hidden: &[usize]) -> NodeId {
    let s = g.param("nice.log_scale", 1, dim);
    let ns = g.neg(s);
    let es = g.exp(ns);
    let mut v = g.mul(u, es);
    for l in (0..layers).rev() {
        v = couple(g, v, dim, l, hidden, -1.0);
    }
    v
}

/// Standard-normal log-density per row.
fn std_normal_logpdf(g: &mut Graph, u: NodeId, dim: usize) -> NodeId {
    let sq = g.square(u);
    let ss = g.sum_rows(sq);
    let h = g.scale(ss, -0.5);
    g.offset(h, -0.5 * dim as f64 * (2.0 * PI).ln())
}

pub(crate) fn mog_log_prob(g: &mut Graph, x: NodeId, dim: usize, m: usize) -> NodeId {
    let mu = g.param("mog.means", m, dim);
    let ls = g.param("mog.log_scales", m, dim);
    let logits = g.param("mog.logits", 1, m);

    // quad[n, m] = sum_d (x - mu)^2 * a, a = exp(-2 ls), expanded into
    // matrix products.
    let m2 = g.scale(ls, -2.0);
    let a = g.exp(m2);
    let at = g.transpose(a);
    let x2 = g.square(x);
    let t1 = g.matmul(x2, at);
    let mua = g.mul(mu, a);
    let muat = g.transpose(mua);
    let t2 = g.matmul(x, muat);
    let t2 = g.scale(t2, -2.0);
    let mu2 = g.square(mu);
    let mu2a = g.mul(mu2, a);
    let c = g.sum_rows(mu2a);
    let ct = g.transpose(c);
    let quad = g.add(t1, t2);
    let quad = g.add(quad, ct);

    let lsum = g.sum_rows(ls);
    let lsum_t = g.transpose(lsum);
    let logw = g.log_softmax_rows(logits);
    let hq = g.scale(quad, -0.5);
    let comp = g.sub(hq, lsum_t);
    let comp = g.offset(comp, -0.5 * dim as f64 * (2.0 * PI).ln());
    let joint = g.add(comp, logw);
    g.logsumexp_rows(joint)
}

/// The network behind the MLP and classifier families.
pub(crate) fn body_mlp(spec: &EnergySpec) -> Option<Mlp> {
    let (prefix, dim, hidden, out) = match spec {
        EnergySpec::Mlp { dim, hidden } => ("energy", *dim, hidden, 1),
        EnergySpec::Jem {
            dim,
            classes,
            hidden,
        } => ("jem", *dim, hidden, *classes),
        _ => return None,
    };
    let mut sizes = vec![dim];
    sizes.extend_from_slice(hidden);
    sizes.push(out);
    Some(Mlp::new(prefix, &sizes, Activation::LeakyRelu))
}

pub(crate) fn build(spec: &EnergySpec) -> EnergyGraph {
    let mut g = Graph::new();
    let dim = spec.dim();
    let x = g.input("x", dim);
    let mut logits = None;
    let mut y = None;
    let mut ce = None;
    let mut ent = None;

    let f = match spec {
        EnergySpec::Quadratic { dim } => {
            let mu = g.param("quad.mu", 1, *dim);
            let ls = g.param("quad.log_s", 1, 1);
            let d = g.sub(x, mu);
            let sq = g.square(d);
            let ss = g.sum_rows(sq);
            let m2 = g.scale(ls, -2.0);
            let inv = g.exp(m2);
            let q = g.mul(ss, inv);
            g.scale(q, -0.5)
        }
        EnergySpec::Mog { dim, components } => mog_log_prob(&mut g, x, *dim, *components),
        EnergySpec::Mlp { .. } => body_mlp(spec).unwrap().build(&mut g, x),
        EnergySpec::Nice {
            dim,
            layers,
            hidden,
        } => {
            let u = nice_forward(&mut g, x, *dim, *layers, hidden);
            let base = std_normal_logpdf(&mut g, u, *dim);
            let s = g.param("nice.log_scale", 1, *dim);
            let logdet = g.sum_all(s);
            g.add(base, logdet)
        }
        EnergySpec::Jem { classes, .. } => {
            let lg = body_mlp(spec).unwrap().build(&mut g, x);
            let lsm = g.log_softmax_rows(lg);
            let yi = g.input("y", *classes);
            let picked = g.mul(yi, lsm);
            let picked = g.sum_rows(picked);
            ce = Some(g.neg(picked));
            let p = g.exp(lsm);
            let plogp = g.mul(p, lsm);
            let s = g.sum_rows(plogp);
            ent = Some(g.neg(s));
            logits = Some(lg);
            y = Some(yi);
            g.logsumexp_rows(lg)
        }
    };

    let total = g.sum_all(f);
    let grad_x = g.grad(total, &[x])[0];
    let gsq = g.square(grad_x);
    let pen = g.sum_rows(gsq);
    EnergyGraph {
        graph: g,
        x,
        f,
        grad_x,
        pen,
        logits,
        y,
        ce,
        ent,
    }
}
