use std::fmt;
use std::sync::Arc;

use crate::tensor::Tensor;

/// Negative slope of the leaky ReLU used throughout the models.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Graph operations. Binary elementwise ops broadcast `1 x c`, `r x 1`
/// and `1 x 1` operands against the other side.
#[derive(Clone, Debug)]
pub enum Op {
    Input(String),
    Param(String),
    Const(Arc<Tensor>),

    MatMul,
    Transpose,

    Add,
    Sub,
    Mul,
    Div,

    Neg,
    Scale(f64),
    Offset(f64),
    Exp,
    Log,
    Square,
    Tanh,
    Sigmoid,
    Softplus,
    /// Leaky ReLU with the given negative slope; slope 0 is a plain ReLU.
    LeakyRelu(f64),
    /// Derivative mask of `LeakyRelu`: 1 where `x >= 0`, slope elsewhere.
    /// Piecewise constant, so it has zero derivative.
    LeakyReluMask(f64),

    SumRows,
    SumCols,
    SumAll,
    /// `[a, reference]`: sum `a` down to the shape of `reference`.
    SumLike,
    /// `[a, reference]`: broadcast `a` up to the shape of `reference`.
    BroadcastLike,
    LogSumExpRows,

    ConcatCols,
    SliceCols { start: usize, end: usize },
    /// Adjoint of `SliceCols`: place the argument at column `start` of a
    /// zero matrix with `total` columns.
    PadCols { start: usize, total: usize },

    OnesLike,
    ZerosLike,
}

impl Op {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Op::Input(_) | Op::Param(_) | Op::Const(_))
    }

    /// Ops with a derivative discontinuity at zero input.
    pub fn has_kink(&self) -> bool {
        matches!(self, Op::LeakyRelu(s) if *s != 1.0)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Square => "square",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::LeakyRelu(s) if *s == 0.0 => "relu",
            Op::LeakyRelu(_) => "leaky_relu",
            Op::LeakyReluMask(_) => "leaky_relu_mask",
            Op::SumRows => "sum_rows",
            Op::SumCols => "sum_cols",
            Op::SumAll => "sum_all",
            Op::SumLike => "sum_like",
            Op::BroadcastLike => "broadcast_like",
            Op::LogSumExpRows => "logsumexp_rows",
            Op::ConcatCols => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::OnesLike => "ones_like",
            Op::ZerosLike => "zeros_like",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Input(n) => write!(f, "input `{n}`"),
            Op::Param(n) => write!(f, "param `{n}`"),
            _ => f.write_str(self.name()),
        }
    }
}
