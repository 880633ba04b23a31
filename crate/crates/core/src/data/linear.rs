use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::tensor::Tensor;

fn gaussian_matrix<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    let t = Tensor::randn(r, c, rng);
    DMatrix::from_fn(r, c, |i, j| t.get(i, j))
}

/// A random linear generator `x = W z + mu + 0.5 eps` with the singular
/// values of `W` drawn uniformly from `[0.5, 2]`, and `n` exact samples.
pub fn make_linear_gaussian(dim: usize, latent: usize, n: usize, seed: u64) -> Result<(Generator, Dataset)> {
    if dim == 0 || latent > dim {
        return Err(Error::invalid(format!(
            "linear-Gaussian instance needs 1 <= latent <= dim, got latent {latent}, dim {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = if latent == 0 {
        DMatrix::zeros(dim, 0)
    } else {
        let u = gaussian_matrix(dim, latent, &mut rng).qr().q();
        let v = gaussian_matrix(latent, latent, &mut rng).qr().q();
        let s = DVector::from_fn(latent, |_, _| rng.random_range(0.5..=2.0));
        u * DMatrix::from_diagonal(&s) * v.transpose()
    };
    let mu = Tensor::randn(1, dim, &mut rng);
    let wt = Tensor::new(dim, latent, (0..dim).flat_map(|i| (0..latent).map(move |j| (i, j))).map(|(i, j)| w[(i, j)]).collect())?;
    let gen = Generator::linear(&wt, mu.data(), 0.5)?;
    let data = gen.sample(n, &mut rng)?;
    Ok((gen, Dataset::new(data.x, None)?))
}

/// Closed-form maximum-likelihood linear generator with `latent`
/// dimensions (probabilistic PCA): `sigma^2` is the mean discarded
/// eigenvalue of the sample covariance and `W = U (L - sigma^2)^(1/2)`.
pub fn fit_linear_gaussian(data: &Tensor, latent: usize) -> Result<Generator> {
    let (n, dim) = (data.rows(), data.cols());
    if latent >= dim || n < 2 {
        return Err(Error::invalid(format!(
            "moment matching needs latent < dim and n >= 2, got latent {latent}, dim {dim}, n {n}"
        )));
    }
    let x = DMatrix::from_fn(n, dim, |i, j| data.get(i, j));
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let sigma2 = order[latent..].iter().map(|i| eig.eigenvalues[*i]).sum::<f64>() / (dim - latent) as f64;
    let mut w = Tensor::zeros(dim, latent);
    for (j, &k) in order[..latent].iter().enumerate() {
        let s = (eig.eigenvalues[k] - sigma2).max(0.0).sqrt();
        for i in 0..dim {
            w.set(i, j, eig.eigenvectors[(i, k)] * s);
        }
    }
    Generator::linear(&w, mean.as_slice(), sigma2.sqrt())
}
