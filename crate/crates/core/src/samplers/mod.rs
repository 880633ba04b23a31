//! Markov chain samplers: SGLD with a persistent replay buffer, HMC, and
//! latent-space MALA refinement.

mod buffer;
mod hmc;
mod mala;
mod sgld;

pub use buffer::{data_box, BufferDraw, ReplayBuffer};
pub use hmc::{hmc_step, leapfrog, tune_hmc_step, HmcChain, HmcStats, LogTarget};
pub use mala::{
    mala_latent_step, mala_log_ratio, refine, tune_step_size, LatentEval, LatentTarget, MalaState,
    StepTuner, TraceRow,
};
pub use sgld::{sgld_chain, sgld_with, SgldConfig};
