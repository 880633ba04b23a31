//! Quadrature normalization for energies of dimension 1 or 2.

use crate::diffcore::logsumexp;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::EnergyModel;

/// Regular grid with `resolution` points per axis, endpoints included.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
}

impl GridSpec {
    pub fn square(lo: f64, hi: f64, dim: usize, resolution: usize) -> Self {
        Self {
            bounds: vec![(lo, hi); dim],
            resolution,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if dim == 0 || dim > 2 {
            return Err(Error::Unsupported(format!(
                "grid normalization needs dimension 1 or 2, got {dim}"
            )));
        }
        if self.bounds.len() != dim {
            return Err(Error::invalid(format!(
                "{} grid bounds for a {dim}-dimensional model",
                self.bounds.len()
            )));
        }
        if self.resolution < 2 {
            return Err(Error::invalid("grid resolution must be >= 2"));
        }
        if self.bounds.iter().any(|(lo, hi)| !(hi > lo)) {
            return Err(Error::invalid("grid bounds must satisfy lo < hi"));
        }
        Ok(())
    }

    fn axis(&self, d: usize) -> (Vec<f64>, f64) {
        let (lo, hi) = self.bounds[d];
        let n = self.resolution;
        let h = (hi - lo) / (n - 1) as f64;
        ((0..n).map(|i| lo + h * i as f64).collect(), h)
    }

    /// Grid points in row-major order (last axis fastest) and their
    /// trapezoid log-weights.
    pub fn points(&self) -> (Tensor, Vec<f64>) {
        let dim = self.bounds.len();
        let n = self.resolution;
        let trap = |i: usize, h: f64| if i == 0 || i == n - 1 { 0.5 * h } else { h };
        if dim == 1 {
            let (xs, h) = self.axis(0);
            let lw = (0..n).map(|i| trap(i, h).ln()).collect();
            return (Tensor::col_vector(&xs), lw);
        }
        let (xs, hx) = self.axis(0);
        let (ys, hy) = self.axis(1);
        let mut data = Vec::with_capacity(2 * n * n);
        let mut lw = Vec::with_capacity(n * n);
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                data.push(*x);
                data.push(*y);
                lw.push((trap(i, hx) * trap(j, hy)).ln());
            }
        }
        (Tensor::new(n * n, 2, data).unwrap(), lw)
    }

    /// Product of the grid spacings.
    pub fn cell_volume(&self) -> f64 {
        (0..self.bounds.len()).map(|d| self.axis(d).1).product()
    }
}

fn energies(model: &EnergyModel, pts: &Tensor) -> Result<Vec<f64>> {
    const CHUNK: usize = 4096;
    let mut out = Vec::with_capacity(pts.rows());
    let mut start = 0;
    while start < pts.rows() {
        let end = (start + CHUNK).min(pts.rows());
        let idx: Vec<usize> = (start..end).collect();
        out.extend(model.energy(&pts.select_rows(&idx))?);
        start = end;
    }
    Ok(out)
}

/// `log` of the trapezoid-rule integral of `exp f` over the grid.
pub fn grid_log_partition(model: &EnergyModel, grid: &GridSpec) -> Result<f64> {
    grid.validate(model.dim())?;
    let (pts, lw) = grid.points();
    let f = energies(model, &pts)?;
    let terms: Vec<f64> = f.iter().zip(&lw).map(|(f, w)| f + w).collect();
    Ok(logsumexp(&terms))
}

/// Grid points, grid-normalized log-density at each point, and the log
/// partition estimate used to normalize.
pub fn grid_log_density(model: &EnergyModel, grid: &GridSpec) -> Result<(Tensor, Vec<f64>, f64)> {
    grid.validate(model.dim())?;
    let (pts, lw) = grid.points();
    let f = energies(model, &pts)?;
    let terms: Vec<f64> = f.iter().zip(&lw).map(|(f, w)| f + w).collect();
    let log_z = logsumexp(&terms);
    Ok((pts, f.into_iter().map(|v| v - log_z).collect(), log_z))
}
