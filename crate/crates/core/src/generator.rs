//! Latent-variable sampler `x = g(z) + sigma * eps`, `z ~ N(0, I)`,
//! `eps ~ N(0, I)`, and its closed-form linear special case.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::Container;
use crate::diffcore::{Activation, Bindings, Graph, Mlp, NodeId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LOG_SIGMA: &str = "gen.log_sigma";
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `g` is an MLP with leaky-ReLU hidden layers.
    Mlp {
        latent: usize,
        dim: usize,
        hidden: Vec<usize>,
    },
    /// `g(z) = W z + mu` with `W` of shape `dim x latent`.
    Linear { latent: usize, dim: usize },
}

impl GeneratorSpec {
    /// Two hidden layers of 100 units.
    pub fn mlp(latent: usize, dim: usize) -> Self {
        GeneratorSpec::Mlp {
            latent,
            dim,
            hidden: vec![100, 100],
        }
    }

    pub fn latent(&self) -> usize {
        match self {
            GeneratorSpec::Mlp { latent, .. } | GeneratorSpec::Linear { latent, .. } => *latent,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::Mlp { dim, .. } | GeneratorSpec::Linear { dim, .. } => *dim,
        }
    }

    /// Initial output noise: 0.1 for 2-D data, 1 otherwise.
    pub fn default_sigma(&self) -> f64 {
        if self.dim() == 2 {
            0.1
        } else {
            1.0
        }
    }

    fn body(&self) -> Option<Mlp> {
        match self {
            GeneratorSpec::Mlp {
                latent,
                dim,
                hidden,
            } => {
                let mut sizes = vec![*latent];
                sizes.extend_from_slice(hidden);
                sizes.push(*dim);
                Some(Mlp::new("gen", &sizes, Activation::LeakyRelu))
            }
            GeneratorSpec::Linear { .. } => None,
        }
    }
}

/// One generator draw. `x == mean(z0) + sigma * eps` holds exactly as
/// computed by [`Generator::sample`].
#[derive(Clone, Debug, PartialEq)]
pub struct GenBatch {
    pub z0: Tensor,
    pub eps: Tensor,
    pub x: Tensor,
}

impl GenBatch {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

#[derive(Clone, Debug)]
struct GenGraph {
    graph: Graph,
    z: NodeId,
    mean: NodeId,
    x: NodeId,
}

fn build(spec: &GeneratorSpec) -> GenGraph {
    let mut g = Graph::new();
    let z = g.input("z", spec.latent());
    let eps = g.input("eps", spec.dim());
    let mean = match spec.body() {
        Some(mlp) => mlp.build(&mut g, z),
        None => {
            let w = g.param("gen.w", spec.latent(), spec.dim());
            let mu = g.param("gen.mu", 1, spec.dim());
            g.affine(z, w, mu)
        }
    };
    let ls = g.param(LOG_SIGMA, 1, 1);
    let sigma = g.exp(ls);
    let noise = g.mul(eps, sigma);
    let x = g.add(mean, noise);
    GenGraph {
        graph: g,
        z,
        mean,
        x,
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    params: ParamSet,
    gg: GenGraph,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(spec: GeneratorSpec, rng: &mut R) -> Result<Self> {
        let mut p = match spec.body() {
            Some(mlp) => mlp.init(rng),
            None => {
                let mut p = ParamSet::new();
                let w = Tensor::randn(spec.latent(), spec.dim(), rng)
                    .scale(1.0 / (spec.latent().max(1) as f64).sqrt());
                p.insert("gen.w", w);
                p.insert("gen.mu", Tensor::zeros(1, spec.dim()));
                p
            }
        };
        p.insert(LOG_SIGMA, Tensor::scalar(spec.default_sigma().ln()));
        Self::from_params(spec, p)
    }

    pub fn from_params(spec: GeneratorSpec, params: ParamSet) -> Result<Self> {
        if spec.dim() == 0 {
            return Err(Error::invalid("generator output dimension must be >= 1"));
        }
        if matches!(spec, GeneratorSpec::Mlp { latent: 0, .. }) {
            return Err(Error::invalid("MLP generator needs latent dimension >= 1"));
        }
        let gg = build(&spec);
        for (name, id) in gg.graph.param_nodes() {
            let s = gg.graph.node(*id).shape;
            let want = [s.rows.unwrap(), s.cols.unwrap()];
            let got = params.require(name)?.shape();
            if got != want {
                return Err(Error::invalid(format!(
                    "parameter `{name}` has shape {got:?}, expected {want:?}"
                )));
            }
        }
        let mut g = Self { spec, params, gg };
        g.clamp_sigma();
        Ok(g)
    }

    /// Linear generator from `W` (`dim x latent`), `mu` and `sigma`.
    pub fn linear(w: &Tensor, mu: &[f64], sigma: f64) -> Result<Self> {
        if w.rows() != mu.len() {
            return Err(Error::invalid(format!(
                "W has {} rows but mu has {} entries",
                w.rows(),
                mu.len()
            )));
        }
        let spec = GeneratorSpec::Linear {
            latent: w.cols(),
            dim: w.rows(),
        };
        let mut p = ParamSet::new();
        p.insert("gen.w", w.transpose());
        p.insert("gen.mu", Tensor::row_vector(mu));
        p.insert(LOG_SIGMA, Tensor::scalar(sigma.max(SIGMA_FLOOR).ln()));
        Self::from_params(spec, p)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn latent(&self) -> usize {
        self.spec.latent()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable parameters; call [`Generator::clamp_sigma`] after editing
    /// the noise scale directly.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Keep `sigma >= 1e-12`.
    pub fn clamp_sigma(&mut self) {
        let t = self.params.get_mut(LOG_SIGMA).expect("log sigma present");
        let v = t.data_mut();
        if !(v[0] >= SIGMA_FLOOR.ln()) {
            v[0] = SIGMA_FLOOR.ln();
        }
    }

    pub fn log_sigma(&self) -> f64 {
        self.params.get(LOG_SIGMA).unwrap().item()
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma().exp()
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.params.insert(LOG_SIGMA, Tensor::scalar(sigma.max(SIGMA_FLOOR).ln()));
    }

    fn check(&self, z: &Tensor, x: Option<&Tensor>) -> Result<()> {
        if z.cols() != self.latent() {
            return Err(Error::invalid(format!(
                "latent batch has {} columns, generator expects {}",
                z.cols(),
                self.latent()
            )));
        }
        if let Some(x) = x {
            if x.cols() != self.dim() || x.rows() != z.rows() {
                return Err(Error::invalid(format!(
                    "data batch {:?} does not pair with latent batch {:?}",
                    x.shape(),
                    z.shape()
                )));
            }
        }
        Ok(())
    }

    /// `g(z)` per row.
    pub fn mean(&self, z: &Tensor) -> Result<Tensor> {
        self.check(z, None)?;
        // Row chunks keep hidden activations small enough to be recycled
        // by the allocator instead of mapped afresh on every call.
        const CHUNK: usize = 128;
        let eval = |z: &Tensor| -> Result<Tensor> {
            let b = Bindings::new().params(&self.params).input("z", z);
            let v = self.gg.graph.eval(&b, &[self.gg.mean])?;
            Ok(v.get(self.gg.mean).clone())
        };
        if z.rows() <= CHUNK {
            return eval(z);
        }
        let parts = (0..z.rows())
            .step_by(CHUNK)
            .map(|s| eval(&z.select_rows(&(s..(s + CHUNK).min(z.rows())).collect::<Vec<_>>())))
            .collect::<Result<Vec<_>>>()?;
        Tensor::vstack(&parts.iter().collect::<Vec<_>>())
    }

    /// Draw `n` samples, returning the latent and noise used for each.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<GenBatch> {
        let z0 = Tensor::randn(n, self.latent(), rng);
        let eps = Tensor::randn(n, self.dim(), rng);
        let x = self.forward(&z0, &eps)?;
        Ok(GenBatch { z0, eps, x })
    }

    /// `g(z) + sigma * eps` for given noise.
    pub fn forward(&self, z: &Tensor, eps: &Tensor) -> Result<Tensor> {
        self.check(z, Some(eps))?;
        let b = Bindings::new()
            .params(&self.params)
            .input("z", z)
            .input("eps", eps);
        let v = self.gg.graph.eval(&b, &[self.gg.x])?;
        Ok(v.get(self.gg.x).clone())
    }

    /// Parameter gradient of `sum(seed * x(z, eps))`.
    pub fn vjp_params(&self, z: &Tensor, eps: &Tensor, seed: &Tensor) -> Result<ParamSet> {
        self.check(z, Some(eps))?;
        let b = Bindings::new()
            .params(&self.params)
            .input("z", z)
            .input("eps", eps);
        let v = self.gg.graph.eval(&b, &[self.gg.x])?;
        self.gg.graph.param_grads(&v, &[(self.gg.x, seed)])
    }

    /// `J_g(z)^T seed` per row.
    pub fn mean_vjp_z(&self, z: &Tensor, seed: &Tensor) -> Result<Tensor> {
        self.check(z, None)?;
        let b = Bindings::new().params(&self.params).input("z", z);
        let v = self.gg.graph.eval(&b, &[self.gg.mean])?;
        Ok(self
            .gg
            .graph
            .backward(&v, &[(self.gg.mean, seed)], &[self.gg.z])?
            .remove(0))
    }

    /// `g(z)` and `J_g(z)^T seed(g(z))` in one forward pass, where the seed
    /// is computed from the mean.
    pub fn mean_and_vjp_z(
        &self,
        z: &Tensor,
        seed: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        self.check(z, None)?;
        let b = Bindings::new().params(&self.params).input("z", z);
        let v = self.gg.graph.eval(&b, &[self.gg.mean])?;
        let mean = v.get(self.gg.mean).clone();
        let s = seed(&mean)?;
        let gz = self
            .gg
            .graph
            .backward(&v, &[(self.gg.mean, &s)], &[self.gg.z])?
            .remove(0);
        Ok((mean, gz))
    }

    /// `log N(x; g(z), sigma^2 I)` per row, given precomputed `g(z)`.
    pub fn cond_log_prob_from_mean(&self, x: &Tensor, mean: &Tensor) -> Vec<f64> {
        let d = self.dim() as f64;
        let ls = self.log_sigma();
        let inv = (-2.0 * ls).exp();
        (0..x.rows())
            .map(|r| {
                let sq: f64 = x.row(r).iter().zip(mean.row(r)).map(|(a, b)| (a - b).powi(2)).sum();
                -0.5 * sq * inv - d * ls - 0.5 * d * (2.0 * PI).ln()
            })
            .collect()
    }

    pub fn cond_log_prob(&self, x: &Tensor, z: &Tensor) -> Result<Vec<f64>> {
        self.check(z, Some(x))?;
        Ok(self.cond_log_prob_from_mean(x, &self.mean(z)?))
    }

    /// `log N(z; 0, I)` per row.
    pub fn prior_log_prob(z: &Tensor) -> Vec<f64> {
        let d = z.cols() as f64;
        (0..z.rows())
            .map(|r| -0.5 * z.row(r).iter().map(|v| v * v).sum::<f64>() - 0.5 * d * (2.0 * PI).ln())
            .collect()
    }

    /// `log q(x | z) + log q(z)` per row.
    pub fn joint_log_prob(&self, x: &Tensor, z: &Tensor) -> Result<Vec<f64>> {
        let c = self.cond_log_prob(x, z)?;
        Ok(c.iter().zip(Self::prior_log_prob(z)).map(|(a, b)| a + b).collect())
    }

    /// `(g(z) - x) / sigma^2` per row.
    pub fn cond_score(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        self.check(z, Some(x))?;
        let inv = (-2.0 * self.log_sigma()).exp();
        Ok(self.mean(z)?.zip_map(x, |m, xv| (m - xv) * inv))
    }

    /// Closed-form view of a linear generator.
    pub fn as_linear(&self) -> Result<LinearGaussian> {
        match self.spec {
            GeneratorSpec::Linear { latent, dim } => {
                let wt = self.params.require("gen.w")?;
                let w = DMatrix::from_fn(dim, latent, |i, j| wt.get(j, i));
                let mu = DVector::from_row_slice(self.params.require("gen.mu")?.data());
                Ok(LinearGaussian {
                    w,
                    mu,
                    sigma: self.sigma(),
                })
            }
            GeneratorSpec::Mlp { .. } => Err(Error::Unsupported(
                "closed-form marginal needs a linear generator".into(),
            )),
        }
    }

    pub fn to_container(&self) -> Container {
        Container::new(
            json!({"kind": "generator", "spec": self.spec}),
            self.params.clone(),
        )
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind() != Some("generator") {
            return Err(Error::Format(format!(
                "expected a generator checkpoint, found kind {:?}",
                c.kind()
            )));
        }
        let spec: GeneratorSpec = serde_json::from_value(
            c.meta
                .get("spec")
                .cloned()
                .ok_or_else(|| Error::Format("generator checkpoint without spec".into()))?,
        )?;
        Self::from_params(spec, c.arrays.clone())
    }
}

/// `q(x) = N(mu, W W^T + sigma^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussian {
    pub w: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: f64,
}

impl LinearGaussian {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let d = self.dim();
        &self.w * self.w.transpose() + DMatrix::identity(d, d) * (self.sigma * self.sigma)
    }

    fn chol(&self) -> nalgebra::Cholesky<f64, nalgebra::Dyn> {
        self.cov()
            .cholesky()
            .expect("W W^T + sigma^2 I is positive definite for sigma > 0")
    }

    /// `-Sigma^{-1} (x - mu)` per row.
    pub fn score(&self, x: &Tensor) -> Tensor {
        let ch = self.chol();
        let mut out = Tensor::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let diff = DVector::from_row_slice(x.row(r)) - &self.mu;
            let s = ch.solve(&diff);
            for (o, v) in out.row_mut(r).iter_mut().zip(s.iter()) {
                *o = -v;
            }
        }
        out
    }

    /// `0.5 ln det(2 pi e Sigma)`.
    pub fn entropy(&self) -> f64 {
        let d = self.dim() as f64;
        0.5 * (d * (2.0 * PI * std::f64::consts::E).ln() + self.chol().ln_determinant())
    }

    pub fn log_density(&self, x: &Tensor) -> Vec<f64> {
        let ch = self.chol();
        let d = self.dim() as f64;
        let ld = ch.ln_determinant();
        (0..x.rows())
            .map(|r| {
                let diff = DVector::from_row_slice(x.row(r)) - &self.mu;
                let q = diff.dot(&ch.solve(&diff));
                -0.5 * (q + ld + d * (2.0 * PI).ln())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    #[test]
    fn reconstruction_identity_is_exact() {
        let g = Generator::new(GeneratorSpec::mlp(3, 2), &mut rng(0)).unwrap();
        let b = g.sample(16, &mut rng(1)).unwrap();
        let m = g.mean(&b.z0).unwrap();
        let s = g.sigma();
        for ((x, m), e) in b.x.data().iter().zip(m.data()).zip(b.eps.data()) {
            assert_eq!(x.to_bits(), (m + e * s).to_bits());
        }
    }

    #[test]
    fn noiseless_limit() {
        let mut g = Generator::new(GeneratorSpec::mlp(2, 3), &mut rng(2)).unwrap();
        g.set_sigma(0.0);
        assert!((g.sigma() / SIGMA_FLOOR - 1.0).abs() < 1e-12);
        let b = g.sample(8, &mut rng(3)).unwrap();
        let m = g.mean(&b.z0).unwrap();
        assert!(b.x.max_abs_diff(&m) < 1e-10);
    }

    #[test]
    fn same_seed_same_batch() {
        let g = Generator::new(GeneratorSpec::mlp(2, 2), &mut rng(4)).unwrap();
        assert_eq!(g.sample(5, &mut rng(9)).unwrap(), g.sample(5, &mut rng(9)).unwrap());
    }

    #[test]
    fn isotropic_linear_variance() {
        let g = Generator::linear(&Tensor::zeros(3, 2), &[0.0; 3], 2.0).unwrap();
        let n = 100_000;
        let b = g.sample(n, &mut rng(5)).unwrap();
        for c in 0..3 {
            let col = b.x.column(c);
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            assert!((v - 4.0).abs() < 0.12, "{v}");
        }
    }

    #[test]
    fn joint_log_prob_at_modes() {
        let g = Generator::linear(&Tensor::scalar(0.7), &[0.3], 1.0).unwrap();
        let z = Tensor::scalar(0.0);
        let x = g.mean(&z).unwrap();
        let j = g.joint_log_prob(&x, &z).unwrap()[0];
        assert!((j + 1.837_877_066_409_345).abs() < 1e-12);
        let c = g.cond_log_prob(&x, &z).unwrap()[0];
        assert!((j - c - Generator::prior_log_prob(&z)[0]).abs() < 1e-15);
    }

    #[test]
    fn joint_integrates_to_marginal() {
        let g = Generator::linear(&Tensor::scalar(1.3), &[0.4], 0.6).unwrap();
        let lin = g.as_linear().unwrap();
        let x = Tensor::scalar(1.1);
        let n = 4001;
        let (lo, hi) = (-10.0, 10.0);
        let h = (hi - lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let z = Tensor::scalar(lo + h * i as f64);
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * h * g.joint_log_prob(&x, &z).unwrap()[0].exp();
        }
        let analytic = lin.log_density(&x)[0].exp();
        assert!((total - analytic).abs() < 1e-3 * analytic);
    }

    #[test]
    fn cond_score_values_and_autodiff() {
        let g = Generator::linear(&Tensor::zeros(1, 1), &[0.0], 1.0).unwrap();
        let s = g.cond_score(&Tensor::scalar(2.0), &Tensor::scalar(0.5)).unwrap();
        assert_eq!(s.item(), -2.0);

        let g = Generator::new(GeneratorSpec::mlp(2, 3), &mut rng(6)).unwrap();
        let z = Tensor::randn(4, 2, &mut rng(7));
        let x = g.mean(&z).unwrap();
        assert!(g.cond_score(&x, &z).unwrap().data().iter().all(|v| *v == 0.0));

        // Gradient of log q(x|z) with respect to x through a graph.
        let x = Tensor::randn(4, 3, &mut rng(8));
        let mut gr = Graph::new();
        let xi = gr.input("x", 3);
        let mi = gr.input("m", 3);
        let d = gr.sub(xi, mi);
        let sq = gr.square(d);
        let s = gr.sum_all(sq);
        let lp = gr.scale(s, -0.5 / (g.sigma() * g.sigma()));
        let m = g.mean(&z).unwrap();
        let b = Bindings::new().input("x", &x).input("m", &m);
        let ad = crate::diffcore::grad_backward(&gr, &b, lp, None).unwrap();
        let cs = g.cond_score(&x, &z).unwrap();
        assert!(ad.inputs["x"].max_abs_diff(&cs) < 1e-8);
    }

    #[test]
    fn linear_isotropic_closed_forms() {
        let g = Generator::linear(&Tensor::zeros(3, 2), &[1.0, 0.0, -1.0], 0.5).unwrap();
        let lin = g.as_linear().unwrap();
        let x = Tensor::row_vector(&[0.0, 1.0, 2.0]);
        let s = lin.score(&x);
        assert!((s.get(0, 0) - 4.0).abs() < 1e-12);
        assert!((s.get(0, 2) + 12.0).abs() < 1e-12);
        let h = 1.5 * (2.0 * PI * std::f64::consts::E * 0.25).ln();
        assert!((lin.entropy() - h).abs() < 1e-12);

        let g = Generator::linear(&Tensor::scalar(1.5), &[0.0], 0.5).unwrap();
        let h = 0.5 * (2.0 * PI * std::f64::consts::E * (2.25 + 0.25)).ln();
        assert!((g.as_linear().unwrap().entropy() - h).abs() < 1e-12);
    }

    #[test]
    fn linear_score_matches_finite_differences() {
        let mut r = rng(10);
        let w = Tensor::randn(4, 2, &mut r);
        let mu: Vec<f64> = Tensor::randn(1, 4, &mut r).into_data();
        let lin = Generator::linear(&w, &mu, 0.7).unwrap().as_linear().unwrap();
        let x = Tensor::randn(1, 4, &mut r);
        let s = lin.score(&x);
        let h = 1e-5;
        for c in 0..4 {
            let mut xp = x.clone();
            xp.set(0, c, x.get(0, c) + h);
            let mut xm = x.clone();
            xm.set(0, c, x.get(0, c) - h);
            let num = (lin.log_density(&xp)[0] - lin.log_density(&xm)[0]) / (2.0 * h);
            assert!((num - s.get(0, c)).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_entropy_increases_with_sigma() {
        let w = Tensor::randn(3, 2, &mut rng(11));
        let mut prev = f64::NEG_INFINITY;
        for i in 1..20 {
            let h = Generator::linear(&w, &[0.0; 3], 0.1 * i as f64).unwrap().as_linear().unwrap().entropy();
            assert!(h > prev);
            prev = h;
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = Generator::new(GeneratorSpec::mlp(2, 2), &mut rng(12)).unwrap();
        let back = Generator::from_container(&g.to_container()).unwrap();
        assert_eq!(back.params(), g.params());
        assert!((back.sigma() - 0.1).abs() < 1e-15);
    }
}
