//! Adversarial relativistic-contrastive (ARC) post-training for rectified
//! flows, at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! * [`flowcore`]: the linear noising process, log-SNR transforms, timestep
//!   distributions and the Euler ODE sampler.
//! * [`toydata`]: conditional Gaussian-mixture data with analytic moments.
//! * [`nets`]: velocity network, generator view and discriminator with
//!   hand-derived reverse-mode gradients, plus the checkpoint format.
//! * [`arcloss`]: rectified-flow, relativistic, contrastive and
//!   least-squares objectives and the alternating update step.
//! * [`pingpong`]: few-step denoise/re-noise sampling and style transfer.
//! * [`evalkit`]: conditional diversity, recall/coverage, Fréchet distance,
//!   sliced Wasserstein, adherence and timing.
//! * [`harness`]: configs, seeds, pretraining, post-training, evaluation and
//!   the ablation table.

pub mod arcloss;
pub mod error;
pub mod evalkit;
pub mod flowcore;
pub mod harness;
pub mod nets;
pub mod optim;
pub mod pingpong;
pub mod seeds;
pub mod toydata;

pub use error::{Error, Result};
