//! Static computation graphs with named leaves.
//!
//! Nodes are appended in topological order, so a graph is acyclic by
//! construction. Evaluation binds every leaf by name; the graph itself holds
//! no parameter values and no randomness.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::kernels::eval_op;
use super::op::Op;
use super::params::ParamSet;
use super::vjp::{vjp, Emit};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statically known extent of a node; `None` is a batch-dependent size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StaticShape {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub args: Vec<NodeId>,
    pub shape: StaticShape,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, NodeId>,
    params: BTreeMap<String, NodeId>,
}

/// Leaf values for one evaluation.
#[derive(Clone, Debug, Default)]
pub struct Bindings<'a> {
    map: HashMap<&'a str, &'a Tensor>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(mut self, name: &'a str, value: &'a Tensor) -> Self {
        self.map.insert(name, value);
        self
    }

    pub fn params(mut self, params: &'a ParamSet) -> Self {
        for (k, v) in params.iter() {
            self.map.insert(k.as_str(), v);
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&'a Tensor> {
        self.map.get(name).copied()
    }
}

/// Node values from a forward pass. Only ancestors of the requested
/// outputs are populated.
#[derive(Clone, Debug)]
pub struct Values {
    vals: Vec<Option<Arc<Tensor>>>,
}

impl Values {
    pub fn get(&self, id: NodeId) -> &Tensor {
        self.vals[id.0]
            .as_deref()
            .unwrap_or_else(|| panic!("node {} was not evaluated", id.0))
    }

    pub fn try_get(&self, id: NodeId) -> Option<&Tensor> {
        self.vals.get(id.0).and_then(|v| v.as_deref())
    }
}

fn merge_dim(a: Option<usize>, b: Option<usize>) -> std::result::Result<Option<usize>, String> {
    match (a, b) {
        (Some(x), Some(y)) if x == y => Ok(Some(x)),
        (Some(1), other) | (other, Some(1)) => Ok(other),
        (Some(x), Some(y)) => Err(format!("{x} vs {y}")),
        (Some(x), None) | (None, Some(x)) => Ok(Some(x)),
        (None, None) => Ok(None),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn param_nodes(&self) -> &BTreeMap<String, NodeId> {
        &self.params
    }

    pub fn input_nodes(&self) -> &BTreeMap<String, NodeId> {
        &self.inputs
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    fn infer(&self, op: &Op, args: &[NodeId]) -> std::result::Result<StaticShape, String> {
        let s = |i: usize| self.nodes[args[i].0].shape;
        let shape = match op {
            Op::Input(_) | Op::Param(_) => unreachable!("leaves carry explicit shapes"),
            Op::Const(t) => StaticShape {
                rows: Some(t.rows()),
                cols: Some(t.cols()),
            },
            Op::MatMul => {
                let (a, b) = (s(0), s(1));
                if let (Some(x), Some(y)) = (a.cols, b.rows) {
                    if x != y {
                        return Err(format!("matmul inner {x} vs {y}"));
                    }
                }
                StaticShape {
                    rows: a.rows,
                    cols: b.cols,
                }
            }
            Op::Transpose => StaticShape {
                rows: s(0).cols,
                cols: s(0).rows,
            },
            Op::Add | Op::Sub | Op::Mul | Op::Div => StaticShape {
                rows: merge_dim(s(0).rows, s(1).rows)?,
                cols: merge_dim(s(0).cols, s(1).cols)?,
            },
            Op::Neg
            | Op::Scale(_)
            | Op::Offset(_)
            | Op::Exp
            | Op::Log
            | Op::Square
            | Op::Tanh
            | Op::Sigmoid
            | Op::Softplus
            | Op::LeakyRelu(_)
            | Op::LeakyReluMask(_)
            | Op::OnesLike
            | Op::ZerosLike => s(0),
            Op::SumRows | Op::LogSumExpRows => StaticShape {
                rows: s(0).rows,
                cols: Some(1),
            },
            Op::SumCols => StaticShape {
                rows: Some(1),
                cols: s(0).cols,
            },
            Op::SumAll => StaticShape {
                rows: Some(1),
                cols: Some(1),
            },
            Op::SumLike | Op::BroadcastLike => s(1),
            Op::ConcatCols => {
                let mut rows = None;
                let mut cols = 0;
                for i in 0..args.len() {
                    rows = merge_dim(rows, s(i).rows)?;
                    cols += s(i)
                        .cols
                        .ok_or("concat needs statically known column counts")?;
                }
                StaticShape {
                    rows,
                    cols: Some(cols),
                }
            }
            Op::SliceCols { start, end } => {
                if let Some(c) = s(0).cols {
                    if end > &c || start > end {
                        return Err(format!("slice {start}..{end} of {c} columns"));
                    }
                }
                StaticShape {
                    rows: s(0).rows,
                    cols: Some(end - start),
                }
            }
            Op::PadCols { start, total } => {
                if let Some(c) = s(0).cols {
                    if start + c > *total {
                        return Err(format!("pad {c} columns at {start} into {total}"));
                    }
                }
                StaticShape {
                    rows: s(0).rows,
                    cols: Some(*total),
                }
            }
        };
        Ok(shape)
    }

    /// Append an operation node. Panics when the statically known shapes are
    /// incompatible, which is a bug in the model definition.
    pub fn push(&mut self, op: Op, args: &[NodeId]) -> NodeId {
        let shape = self
            .infer(&op, args)
            .unwrap_or_else(|e| panic!("building {op} (node {}): {e}", self.nodes.len()));
        self.nodes.push(Node {
            op,
            args: args.to_vec(),
            shape,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Declare a named batch input with a fixed column count.
    pub fn input(&mut self, name: &str, cols: usize) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        self.nodes.push(Node {
            op: Op::Input(name.to_string()),
            args: vec![],
            shape: StaticShape {
                rows: None,
                cols: Some(cols),
            },
        });
        let id = NodeId(self.nodes.len() - 1);
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// Declare (or look up) a named parameter of fixed shape.
    pub fn param(&mut self, name: &str, rows: usize, cols: usize) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            let s = self.nodes[id.0].shape;
            assert_eq!(
                (s.rows, s.cols),
                (Some(rows), Some(cols)),
                "parameter `{name}` redeclared with a different shape"
            );
            return id;
        }
        self.nodes.push(Node {
            op: Op::Param(name.to_string()),
            args: vec![],
            shape: StaticShape {
                rows: Some(rows),
                cols: Some(cols),
            },
        });
        let id = NodeId(self.nodes.len() - 1);
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const(Arc::new(t)), &[])
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul, &[a, b])
    }
    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose, &[a])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, &[a, b])
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Div, &[a, b])
    }
    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Neg, &[a])
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(c), &[a])
    }
    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Offset(c), &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log, &[a])
    }
    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Square, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid, &[a])
    }
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softplus, &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LeakyRelu(0.0), &[a])
    }
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu(slope), &[a])
    }
    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumRows, &[a])
    }
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumCols, &[a])
    }
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumAll, &[a])
    }
    pub fn logsumexp_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSumExpRows, &[a])
    }
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::ConcatCols, parts)
    }
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        self.push(Op::SliceCols { start, end }, &[a])
    }

    /// `x @ w + b`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let lse = self.logsumexp_rows(a);
        self.sub(a, lse)
    }

    fn needed(&self, outputs: &[NodeId]) -> Vec<bool> {
        let mut needed = vec![false; self.nodes.len()];
        for o in outputs {
            needed[o.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if needed[i] {
                for a in &self.nodes[i].args {
                    needed[a.0] = true;
                }
            }
        }
        needed
    }

    /// Forward pass computing every ancestor of `outputs`.
    pub fn eval(&self, bind: &Bindings<'_>, outputs: &[NodeId]) -> Result<Values> {
        let needed = self.needed(outputs);
        let mut vals: Vec<Option<Arc<Tensor>>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if !needed[i] {
                continue;
            }
            let value = match &node.op {
                Op::Input(name) => {
                    let t = bind
                        .get(name)
                        .ok_or_else(|| Error::UnboundInput(name.clone()))?;
                    if node.shape.cols.is_some_and(|c| c != t.cols()) {
                        return Err(self.shape_err(i, format!(
                            "input `{name}` bound with {} columns, declared {}",
                            t.cols(),
                            node.shape.cols.unwrap()
                        )));
                    }
                    t.clone()
                }
                Op::Param(name) => {
                    let t = bind
                        .get(name)
                        .ok_or_else(|| Error::UnboundParam(name.clone()))?;
                    let declared = [node.shape.rows.unwrap(), node.shape.cols.unwrap()];
                    if t.shape() != declared {
                        return Err(self.shape_err(i, format!(
                            "parameter `{name}` bound with shape {:?}, declared {declared:?}",
                            t.shape()
                        )));
                    }
                    t.clone()
                }
                op => {
                    let args: Vec<&Tensor> = node
                        .args
                        .iter()
                        .map(|a| vals[a.0].as_deref().expect("argument evaluated"))
                        .collect();
                    eval_op(op, &args).map_err(|d| self.shape_err(i, d))?
                }
            };
            vals[i] = Some(Arc::new(value));
        }
        Ok(Values { vals })
    }

    fn shape_err(&self, node: usize, detail: String) -> Error {
        Error::Shape {
            node,
            op: self.nodes[node].op.to_string(),
            detail,
        }
    }

    fn reaches(&self, wrt: &[NodeId]) -> Vec<bool> {
        let mut reach = vec![false; self.nodes.len()];
        for w in wrt {
            reach[w.0] = true;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !reach[i] && node.args.iter().any(|a| reach[a.0]) {
                reach[i] = true;
            }
        }
        reach
    }

    /// Reverse pass seeded with one cotangent per seed node (summed when a
    /// node appears twice). Returns the gradient for each `wrt` node, zeros
    /// where it does not influence any seed.
    pub fn backward(
        &self,
        values: &Values,
        seeds: &[(NodeId, &Tensor)],
        wrt: &[NodeId],
    ) -> Result<Vec<Tensor>> {
        let reach = self.reaches(wrt);
        let mut grads: Vec<Option<Arc<Tensor>>> = vec![None; self.nodes.len()];
        let mut top = 0;
        for (id, seed) in seeds {
            let v = values.try_get(*id).ok_or_else(|| {
                Error::invalid(format!("seed node {} was not evaluated", id.0))
            })?;
            if v.shape() != seed.shape() {
                return Err(self.shape_err(
                    id.0,
                    format!("cotangent {:?} for value {:?}", seed.shape(), v.shape()),
                ));
            }
            accumulate(&mut grads[id.0], Arc::new((*seed).clone()));
            top = top.max(id.0 + 1);
        }

        let mut eager = Eager;
        for i in (0..top).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            if node.op.is_leaf() {
                continue;
            }
            let need: Vec<bool> = node.args.iter().map(|a| reach[a.0]).collect();
            if !need.iter().any(|&b| b) {
                continue;
            }
            let args: Vec<Arc<Tensor>> = node
                .args
                .iter()
                .map(|a| values.vals[a.0].clone().expect("forward value present"))
                .collect();
            let y = values.vals[i].clone().expect("forward value present");
            let contribs = vjp(&mut eager, &node.op, &args, &y, &g, &need);
            for (a, c) in node.args.iter().zip(contribs) {
                if let Some(c) = c {
                    accumulate(&mut grads[a.0], c);
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match &grads[w.0] {
                Some(g) => (**g).clone(),
                None => {
                    let s = values
                        .try_get(*w)
                        .map(Tensor::shape)
                        .or_else(|| self.static_shape(*w))
                        .unwrap_or([0, 0]);
                    Tensor::zeros(s[0], s[1])
                }
            })
            .collect())
    }

    fn static_shape(&self, id: NodeId) -> Option<[usize; 2]> {
        let s = self.nodes[id.0].shape;
        Some([s.rows?, s.cols?])
    }

    /// Gradient of a scalar node with respect to `wrt`.
    pub fn grad_scalar(&self, values: &Values, y: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let v = values.get(y);
        if v.shape() != [1, 1] {
            return Err(Error::NonScalarOutput { shape: v.shape() });
        }
        self.backward(values, &[(y, &Tensor::scalar(1.0))], wrt)
    }

    /// Gradients with respect to every parameter leaf of the graph.
    pub fn param_grads(&self, values: &Values, seeds: &[(NodeId, &Tensor)]) -> Result<ParamSet> {
        let ids: Vec<NodeId> = self.params.values().copied().collect();
        let grads = self.backward(values, seeds, &ids)?;
        Ok(self.params.keys().cloned().zip(grads).collect())
    }

    /// Symbolic differentiation: appends nodes computing the gradient of
    /// `sum(y)` with respect to each `wrt` node, and returns them. The new
    /// nodes are ordinary graph nodes and can themselves be differentiated.
    pub fn grad(&mut self, y: NodeId, wrt: &[NodeId]) -> Vec<NodeId> {
        let reach = self.reaches(wrt);
        let top = y.0 + 1;
        let mut grads: Vec<Option<NodeId>> = vec![None; top];
        grads[y.0] = Some(self.push(Op::OnesLike, &[y]));

        for i in (0..top).rev() {
            if !reach[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let node = self.nodes[i].clone();
            if node.op.is_leaf() {
                continue;
            }
            let need: Vec<bool> = node.args.iter().map(|a| reach[a.0]).collect();
            if !need.iter().any(|&b| b) {
                continue;
            }
            let mut sym = Symbolic(self);
            let contribs = vjp(&mut sym, &node.op, &node.args, &NodeId(i), &g, &need);
            for (a, c) in node.args.iter().zip(contribs) {
                if let Some(c) = c {
                    grads[a.0] = Some(match grads[a.0] {
                        Some(prev) => self.add(prev, c),
                        None => c,
                    });
                }
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.push(Op::ZerosLike, &[*w]),
            })
            .collect()
    }
}

fn accumulate(slot: &mut Option<Arc<Tensor>>, c: Arc<Tensor>) {
    *slot = Some(match slot.take() {
        None => c,
        Some(prev) => {
            let sum = eval_op(&Op::Add, &[&prev, &c])
                .expect("gradient contributions share the value's shape");
            Arc::new(sum)
        }
    });
}

struct Eager;

impl Emit for Eager {
    type V = Arc<Tensor>;

    fn emit(&mut self, op: Op, args: &[&Self::V]) -> Self::V {
        let refs: Vec<&Tensor> = args.iter().map(|a| a.as_ref()).collect();
        Arc::new(
            eval_op(&op, &refs)
                .unwrap_or_else(|e| panic!("backward {op}: {e} (shapes were validated forward)")),
        )
    }

    fn cols(&self, v: &Self::V) -> usize {
        v.cols()
    }
}

struct Symbolic<'g>(&'g mut Graph);

impl Emit for Symbolic<'_> {
    type V = NodeId;

    fn emit(&mut self, op: Op, args: &[&NodeId]) -> NodeId {
        let args: Vec<NodeId> = args.iter().map(|a| **a).collect();
        self.0.push(op, &args)
    }

    fn cols(&self, v: &NodeId) -> usize {
        self.0.nodes[v.0]
            .shape
            .cols
            .expect("symbolic gradient needs static column counts")
    }
}
