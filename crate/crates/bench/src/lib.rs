//! Fixtures shared by the benchmarks. Everything is seeded so timings
//! compare like with like across runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vera_core::data::{make_linear_gaussian, make_toy, ToyKind};
use vera_core::entropy::PosteriorApprox;
use vera_core::models::{EnergyModel, EnergySpec};
use vera_core::trainers::{VeraConfig, VeraState};
use vera_core::{Generator, GeneratorSpec, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Linear-Gaussian generator with `dim = 20`, `latent = 5` and a unit
/// posterior scale.
pub fn linear_instance() -> (Generator, PosteriorApprox) {
    let (g, _) = make_linear_gaussian(20, 5, 1, 0).expect("linear instance");
    (g, PosteriorApprox::shared(5, 0.4).expect("posterior"))
}

/// VERA state for a 100-component mixture on moons, plus the training rows.
pub fn moons_vera(cfg: &VeraConfig) -> (VeraState, Tensor) {
    let mut r = rng(0);
    let data = make_toy(ToyKind::Moons, 2000, 0.1, 0).expect("moons");
    let energy = EnergyModel::new(EnergySpec::Mog { dim: 2, components: 100 }, &mut r).expect("energy");
    let gen = Generator::new(GeneratorSpec::mlp(2, 2), &mut r).expect("generator");
    (VeraState::new(energy, gen, cfg).expect("state"), data.features)
}

/// MLP energy on `dim` inputs, for sampler benchmarks.
pub fn mlp_energy(dim: usize) -> EnergyModel {
    EnergyModel::new(EnergySpec::Mlp { dim, hidden: vec![64, 64] }, &mut rng(1)).expect("energy")
}
