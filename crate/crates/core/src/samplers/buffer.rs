use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Persistent chain states for contrastive training. Each drawn slot is
/// independently replaced by a fresh uniform draw from the box with
/// probability `reinit_prob`.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    samples: Tensor,
    reinit_prob: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Result of [`ReplayBuffer::draw`].
#[derive(Clone, Debug)]
pub struct BufferDraw {
    pub x: Tensor,
    pub idx: Vec<usize>,
    pub fresh: Vec<bool>,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 10_000;
    pub const DEFAULT_REINIT: f64 = 0.05;

    /// Buffer filled with uniform draws from `[lo, hi]` per dimension.
    pub fn new<R: Rng + ?Sized>(
        capacity: usize,
        reinit_prob: f64,
        lo: Vec<f64>,
        hi: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay buffer capacity must be >= 1"));
        }
        if !(0.0..=1.0).contains(&reinit_prob) {
            return Err(Error::invalid(format!("reinit probability {reinit_prob} outside [0, 1]")));
        }
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(h >= l)) {
            return Err(Error::invalid("replay buffer box needs lo <= hi per dimension"));
        }
        let mut b = Self {
            samples: Tensor::zeros(capacity, lo.len()),
            reinit_prob,
            lo,
            hi,
        };
        for r in 0..capacity {
            b.fill_uniform(r, rng);
        }
        Ok(b)
    }

    /// Box from the data's per-dimension range expanded by 10% of its width.
    pub fn from_data<R: Rng + ?Sized>(
        data: &Tensor,
        capacity: usize,
        reinit_prob: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (lo, hi) = data_box(data, 0.1);
        Self::new(capacity, reinit_prob, lo, hi, rng)
    }

    fn fill_uniform<R: Rng + ?Sized>(&mut self, r: usize, rng: &mut R) {
        for (c, v) in self.samples.row_mut(r).iter_mut().enumerate() {
            let (l, h) = (self.lo[c], self.hi[c]);
            *v = l + (h - l) * rng.random::<f64>();
        }
    }

    pub fn capacity(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    /// Draw `n` slots uniformly with replacement.
    pub fn draw<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> BufferDraw {
        let mut x = Tensor::zeros(n, self.dim());
        let mut idx = Vec::with_capacity(n);
        let mut fresh = Vec::with_capacity(n);
        for r in 0..n {
            let i = rng.random_range(0..self.capacity());
            let f = rng.random::<f64>() < self.reinit_prob;
            if f {
                self.fill_uniform(i, rng);
            }
            x.row_mut(r).copy_from_slice(self.samples.row(i));
            idx.push(i);
            fresh.push(f);
        }
        BufferDraw { x, idx, fresh }
    }

    /// Write `x` back into the slots it was drawn from.
    pub fn store(&mut self, idx: &[usize], x: &Tensor) {
        assert_eq!(idx.len(), x.rows(), "one slot per stored row");
        for (r, &i) in idx.iter().enumerate() {
            self.samples.row_mut(i).copy_from_slice(x.row(r));
        }
    }
}

/// Per-dimension `[min, max]` expanded by `pad` times the width on each side.
pub fn data_box(data: &Tensor, pad: f64) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; data.cols()];
    let mut hi = vec![f64::NEG_INFINITY; data.cols()];
    for r in 0..data.rows() {
        for (c, v) in data.row(r).iter().enumerate() {
            lo[c] = lo[c].min(*v);
            hi[c] = hi[c].max(*v);
        }
    }
    for c in 0..data.cols() {
        let w = hi[c] - lo[c];
        lo[c] -= pad * w;
        hi[c] += pad * w;
    }
    (lo, hi)
}
