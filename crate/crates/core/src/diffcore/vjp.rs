//! Vector-Jacobian product rules, written once against [`Emit`].
//!
//! The numeric backward pass instantiates them with tensors; symbolic
//! differentiation instantiates them with graph nodes, which is how input
//! gradients (for the gradient penalty) become differentiable themselves.

use super::op::Op;

pub(crate) trait Emit {
    type V: Clone;

    fn emit(&mut self, op: Op, args: &[&Self::V]) -> Self::V;

    /// Column count of a value. Symbolic emitters need it to be static.
    fn cols(&self, v: &Self::V) -> usize;
}

/// Cotangents for each argument of `op` given the output cotangent `g`.
/// `None` means "no gradient" (not requested, or identically zero).
pub(crate) fn vjp<E: Emit>(
    e: &mut E,
    op: &Op,
    args: &[E::V],
    y: &E::V,
    g: &E::V,
    need: &[bool],
) -> Vec<Option<E::V>> {
    let mut out: Vec<Option<E::V>> = vec![None; args.len()];
    let want = |i: usize| need.get(i).copied().unwrap_or(false);

    match op {
        Op::Input(_) | Op::Param(_) | Op::Const(_) => {}
        Op::LeakyReluMask(_) | Op::OnesLike | Op::ZerosLike => {}

        Op::MatMul => {
            if want(0) {
                let bt = e.emit(Op::Transpose, &[&args[1]]);
                out[0] = Some(e.emit(Op::MatMul, &[g, &bt]));
            }
            if want(1) {
                let at = e.emit(Op::Transpose, &[&args[0]]);
                out[1] = Some(e.emit(Op::MatMul, &[&at, g]));
            }
        }
        Op::Transpose => out[0] = Some(e.emit(Op::Transpose, &[g])),

        Op::Add => {
            if want(0) {
                out[0] = Some(e.emit(Op::SumLike, &[g, &args[0]]));
            }
            if want(1) {
                out[1] = Some(e.emit(Op::SumLike, &[g, &args[1]]));
            }
        }
        Op::Sub => {
            if want(0) {
                out[0] = Some(e.emit(Op::SumLike, &[g, &args[0]]));
            }
            if want(1) {
                let ng = e.emit(Op::Neg, &[g]);
                out[1] = Some(e.emit(Op::SumLike, &[&ng, &args[1]]));
            }
        }
        Op::Mul => {
            if want(0) {
                let t = e.emit(Op::Mul, &[g, &args[1]]);
                out[0] = Some(e.emit(Op::SumLike, &[&t, &args[0]]));
            }
            if want(1) {
                let t = e.emit(Op::Mul, &[g, &args[0]]);
                out[1] = Some(e.emit(Op::SumLike, &[&t, &args[1]]));
            }
        }
        Op::Div => {
            let gb = e.emit(Op::Div, &[g, &args[1]]);
            if want(0) {
                out[0] = Some(e.emit(Op::SumLike, &[&gb, &args[0]]));
            }
            if want(1) {
                let t = e.emit(Op::Mul, &[&gb, y]);
                let t = e.emit(Op::Neg, &[&t]);
                out[1] = Some(e.emit(Op::SumLike, &[&t, &args[1]]));
            }
        }

        Op::Neg => out[0] = Some(e.emit(Op::Neg, &[g])),
        Op::Scale(c) => out[0] = Some(e.emit(Op::Scale(*c), &[g])),
        Op::Offset(_) => out[0] = Some(g.clone()),
        Op::Exp => out[0] = Some(e.emit(Op::Mul, &[g, y])),
        Op::Log => out[0] = Some(e.emit(Op::Div, &[g, &args[0]])),
        Op::Square => {
            let t = e.emit(Op::Mul, &[g, &args[0]]);
            out[0] = Some(e.emit(Op::Scale(2.0), &[&t]));
        }
        Op::Tanh => {
            let y2 = e.emit(Op::Square, &[y]);
            let d = e.emit(Op::Scale(-1.0), &[&y2]);
            let d = e.emit(Op::Offset(1.0), &[&d]);
            out[0] = Some(e.emit(Op::Mul, &[g, &d]));
        }
        Op::Sigmoid => {
            let y2 = e.emit(Op::Square, &[y]);
            let d = e.emit(Op::Sub, &[y, &y2]);
            out[0] = Some(e.emit(Op::Mul, &[g, &d]));
        }
        Op::Softplus => {
            let d = e.emit(Op::Sigmoid, &[&args[0]]);
            out[0] = Some(e.emit(Op::Mul, &[g, &d]));
        }
        Op::LeakyRelu(s) => {
            let d = e.emit(Op::LeakyReluMask(*s), &[&args[0]]);
            out[0] = Some(e.emit(Op::Mul, &[g, &d]));
        }

        Op::SumRows | Op::SumCols | Op::SumAll | Op::SumLike => {
            if want(0) {
                out[0] = Some(e.emit(Op::BroadcastLike, &[g, &args[0]]));
            }
        }
        Op::BroadcastLike => {
            if want(0) {
                out[0] = Some(e.emit(Op::SumLike, &[g, &args[0]]));
            }
        }
        Op::LogSumExpRows => {
            let gb = e.emit(Op::BroadcastLike, &[g, &args[0]]);
            let shifted = e.emit(Op::Sub, &[&args[0], y]);
            let soft = e.emit(Op::Exp, &[&shifted]);
            out[0] = Some(e.emit(Op::Mul, &[&gb, &soft]));
        }

        Op::ConcatCols => {
            let mut start = 0;
            for (i, a) in args.iter().enumerate() {
                let w = e.cols(a);
                if want(i) {
                    out[i] = Some(e.emit(
                        Op::SliceCols {
                            start,
                            end: start + w,
                        },
                        &[g],
                    ));
                }
                start += w;
            }
        }
        Op::SliceCols { start, .. } => {
            let total = e.cols(&args[0]);
            out[0] = Some(e.emit(
                Op::PadCols {
                    start: *start,
                    total,
                },
                &[g],
            ));
        }
        Op::PadCols { start, .. } => {
            let w = e.cols(&args[0]);
            out[0] = Some(e.emit(
                Op::SliceCols {
                    start: *start,
                    end: start + w,
                },
                &[g],
            ));
        }
    }

    for (i, o) in out.iter_mut().enumerate() {
        if !want(i) {
            *o = None;
        }
    }
    out
}
