use std::io::Write;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::tensor::Tensor;

/// One JSON line of the metrics stream. Fields a trainer does not produce
/// are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub step: u64,
    pub loss_ebm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_gen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elbo: Option<f64>,
    /// Mean posterior scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess_mean: Option<f64>,
    /// `gamma * mean ||grad_x f(x)||^2` on the data batch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ll_heldout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm_ebm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_norm_gen: Option<f64>,
    /// Only written when timing is enabled, so that default streams are
    /// reproducible byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// JSON-lines sink for [`Metrics`].
pub struct MetricsWriter<W: Write> {
    out: W,
    start: Option<Instant>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W, timing: bool) -> Self {
        Self {
            out,
            start: timing.then(Instant::now),
        }
    }

    pub fn write(&mut self, m: &Metrics) -> Result<()> {
        let mut m = m.clone();
        m.wall_ms = self.start.map(|s| s.elapsed().as_secs_f64() * 1e3);
        serde_json::to_writer(&mut self.out, &m)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Bookkeeping for one training run: the seed and resolved configuration
/// it was started with, where its metrics go and when to checkpoint.
pub struct TrainRun<W: Write> {
    pub seed: u64,
    pub config: Value,
    /// Checkpoint every this many steps (and at the end); `None` only at
    /// the end.
    pub checkpoint_every: Option<u64>,
    /// Held-out evaluation cadence; `None` only at the end.
    pub eval_every: Option<u64>,
    metrics: MetricsWriter<W>,
    written: u64,
}

impl<W: Write> TrainRun<W> {
    pub fn new(seed: u64, config: Value, metrics: MetricsWriter<W>) -> Self {
        Self {
            seed,
            config,
            checkpoint_every: None,
            eval_every: None,
            metrics,
            written: 0,
        }
    }

    pub fn record(&mut self, m: &Metrics) -> Result<()> {
        self.written += 1;
        self.metrics.write(m)
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    fn due(every: Option<u64>, step: u64, last: u64) -> bool {
        step == last || every.is_some_and(|e| e > 0 && step.is_multiple_of(e))
    }

    /// Whether to checkpoint after 1-based `step` of `last`.
    pub fn checkpoint_due(&self, step: u64, last: u64) -> bool {
        Self::due(self.checkpoint_every, step, last)
    }

    pub fn eval_due(&self, step: u64, last: u64) -> bool {
        Self::due(self.eval_every, step, last)
    }

    pub fn finish(mut self) -> Result<W> {
        self.metrics.flush()?;
        Ok(self.metrics.into_inner())
    }
}

/// `n` row indices drawn uniformly with replacement.
pub fn batch_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..len)).collect()
}

/// `n` rows drawn uniformly with replacement.
pub fn minibatch<R: Rng + ?Sized>(data: &Tensor, n: usize, rng: &mut R) -> Tensor {
    data.select_rows(&batch_indices(data.rows(), n, rng))
}
