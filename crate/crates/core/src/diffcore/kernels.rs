//! Forward kernels for every [`Op`]. Errors are plain strings; the graph
//! wraps them with the failing node.

use super::op::Op;
use crate::tensor::Tensor;

type KResult = Result<Tensor, String>;

pub(crate) fn eval_op(op: &Op, args: &[&Tensor]) -> KResult {
    let a = || args[0];
    match op {
        Op::Input(_) | Op::Param(_) => Err("leaf nodes are bound, not evaluated".into()),
        Op::Const(t) => Ok((**t).clone()),

        Op::MatMul => {
            let (x, y) = (args[0], args[1]);
            if x.cols() != y.rows() {
                return Err(format!("matmul {:?} x {:?}", x.shape(), y.shape()));
            }
            Ok(x.matmul(y))
        }
        Op::Transpose => Ok(a().transpose()),

        Op::Add => broadcast(args[0], args[1], |x, y| x + y),
        Op::Sub => broadcast(args[0], args[1], |x, y| x - y),
        Op::Mul => broadcast(args[0], args[1], |x, y| x * y),
        Op::Div => broadcast(args[0], args[1], |x, y| x / y),

        Op::Neg => Ok(a().map(|v| -v)),
        Op::Scale(c) => Ok(a().scale(*c)),
        Op::Offset(c) => Ok(a().map(|v| v + c)),
        Op::Exp => Ok(a().map(f64::exp)),
        Op::Log => Ok(a().map(f64::ln)),
        Op::Square => Ok(a().map(|v| v * v)),
        Op::Tanh => Ok(a().map(f64::tanh)),
        Op::Sigmoid => Ok(a().map(sigmoid)),
        Op::Softplus => Ok(a().map(softplus)),
        Op::LeakyRelu(s) => {
            let s = *s;
            Ok(a().map(|v| if v >= 0.0 { v } else { s * v }))
        }
        Op::LeakyReluMask(s) => {
            let s = *s;
            Ok(a().map(|v| if v >= 0.0 { 1.0 } else { s }))
        }

        Op::SumRows => {
            let t = a();
            Ok(Tensor::from_parts(t.rows(), 1, t.row_sums()))
        }
        Op::SumCols => Ok(sum_cols(a())),
        Op::SumAll => Ok(Tensor::scalar(a().sum())),
        Op::SumLike => sum_to(args[0], args[1].shape()),
        Op::BroadcastLike => broadcast_to(args[0], args[1].shape()),
        Op::LogSumExpRows => {
            let t = a();
            let out = (0..t.rows()).map(|r| logsumexp(t.row(r))).collect();
            Ok(Tensor::from_parts(t.rows(), 1, out))
        }

        Op::ConcatCols => concat_cols(args),
        Op::SliceCols { start, end } => {
            let t = a();
            if start > end || *end > t.cols() {
                return Err(format!("slice {start}..{end} of {} columns", t.cols()));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(t.rows() * w);
            for r in 0..t.rows() {
                data.extend_from_slice(&t.row(r)[*start..*end]);
            }
            Ok(Tensor::from_parts(t.rows(), w, data))
        }
        Op::PadCols { start, total } => {
            let t = a();
            if start + t.cols() > *total {
                return Err(format!(
                    "pad {} columns at {start} into {total}",
                    t.cols()
                ));
            }
            let mut out = Tensor::zeros(t.rows(), *total);
            for r in 0..t.rows() {
                out.row_mut(r)[*start..start + t.cols()].copy_from_slice(t.row(r));
            }
            Ok(out)
        }

        Op::OnesLike => Ok(Tensor::ones(a().rows(), a().cols())),
        Op::ZerosLike => Ok(Tensor::zeros(a().rows(), a().cols())),
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Stable `log(sum(exp(values)))`; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast(x: &Tensor, y: &Tensor, f: impl Fn(f64, f64) -> f64) -> KResult {
    if x.shape() == y.shape() {
        return Ok(x.zip_map(y, f));
    }
    // Bias-style row vector on the right, the common case in every layer.
    if y.rows() == 1 && y.cols() == x.cols() && x.cols() > 0 {
        let mut out = Vec::with_capacity(x.len());
        for xr in x.data().chunks_exact(x.cols()) {
            out.extend(xr.iter().zip(y.data()).map(|(a, b)| f(*a, *b)));
        }
        return Ok(Tensor::from_parts(x.rows(), x.cols(), out));
    }
    let (rows, cols) = match (
        broadcast_dim(x.rows(), y.rows()),
        broadcast_dim(x.cols(), y.cols()),
    ) {
        (Some(r), Some(c)) => (r, c),
        _ => {
            return Err(format!(
                "cannot broadcast {:?} with {:?}",
                x.shape(),
                y.shape()
            ))
        }
    };
    let (xd, yd) = (x.data(), y.data());
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let xr = if x.rows() == 1 { 0 } else { r };
        let yr = if y.rows() == 1 { 0 } else { r };
        for c in 0..cols {
            let xv = xd[xr * x.cols() + if x.cols() == 1 { 0 } else { c }];
            let yv = yd[yr * y.cols() + if y.cols() == 1 { 0 } else { c }];
            out.push(f(xv, yv));
        }
    }
    Ok(Tensor::from_parts(rows, cols, out))
}

fn sum_cols(t: &Tensor) -> Tensor {
    let mut out = vec![0.0; t.cols()];
    for r in 0..t.rows() {
        for (o, v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    Tensor::from_parts(1, t.cols(), out)
}

pub(crate) fn sum_to(t: &Tensor, shape: [usize; 2]) -> KResult {
    let [r, c] = shape;
    if t.shape() == shape {
        return Ok(t.clone());
    }
    let rows_ok = r == t.rows() || r == 1;
    let cols_ok = c == t.cols() || c == 1;
    if !rows_ok || !cols_ok {
        return Err(format!("cannot sum {:?} down to {:?}", t.shape(), shape));
    }
    let partial = if r == 1 && t.rows() != 1 {
        sum_cols(t)
    } else {
        t.clone()
    };
    if c == 1 && partial.cols() != 1 {
        Ok(Tensor::from_parts(partial.rows(), 1, partial.row_sums()))
    } else {
        Ok(partial)
    }
}

pub(crate) fn broadcast_to(t: &Tensor, shape: [usize; 2]) -> KResult {
    let [r, c] = shape;
    if t.shape() == shape {
        return Ok(t.clone());
    }
    if !(t.rows() == r || t.rows() == 1) || !(t.cols() == c || t.cols() == 1) {
        return Err(format!("cannot broadcast {:?} up to {:?}", t.shape(), shape));
    }
    broadcast(t, &Tensor::zeros(r, c), |x, _| x)
}

fn concat_cols(args: &[&Tensor]) -> KResult {
    let rows = args.first().map_or(0, |t| t.rows());
    if let Some(bad) = args.iter().find(|t| t.rows() != rows) {
        return Err(format!("concat rows {} vs {rows}", bad.rows()));
    }
    let total: usize = args.iter().map(|t| t.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for t in args {
            data.extend_from_slice(t.row(r));
        }
    }
    Ok(Tensor::from_parts(rows, total, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero_is_ln2() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn logsumexp_is_shift_invariant() {
        let v = [1000.0, 999.0, 998.0];
        let shifted: Vec<f64> = v.iter().map(|x| x - 1000.0).collect();
        assert!((logsumexp(&v) - 1000.0 - logsumexp(&shifted)).abs() < 1e-12);
        assert!(logsumexp(&v).is_finite());
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }

    #[test]
    fn broadcast_row_and_column() {
        let m = Tensor::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let row = Tensor::row_vector(&[10., 20., 30.]);
        let col = Tensor::col_vector(&[100., 200.]);
        let r = eval_op(&Op::Add, &[&m, &row]).unwrap();
        assert_eq!(r.data(), &[11., 22., 33., 14., 25., 36.]);
        let c = eval_op(&Op::Add, &[&col, &m]).unwrap();
        assert_eq!(c.data(), &[101., 102., 103., 204., 205., 206.]);
        assert!(eval_op(&Op::Add, &[&m, &Tensor::zeros(3, 3)]).is_err());
    }

    #[test]
    fn sum_to_and_broadcast_to_are_adjoint_shapes() {
        let m = Tensor::new(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(sum_to(&m, [1, 3]).unwrap().data(), &[5., 7., 9.]);
        assert_eq!(sum_to(&m, [2, 1]).unwrap().data(), &[6., 15.]);
        assert_eq!(sum_to(&m, [1, 1]).unwrap().data(), &[21.]);
        let b = broadcast_to(&Tensor::scalar(2.0), [2, 2]).unwrap();
        assert_eq!(b.data(), &[2.; 4]);
    }
}
