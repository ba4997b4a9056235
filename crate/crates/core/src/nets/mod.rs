//! Small conditional networks with exact reverse-mode gradients.
//!
//! Parameters live in one flat buffer per network ([`NetParams`]); every
//! forward pass records a tape that the matching `backward` walks in reverse.

pub mod checkpoint;
mod discriminator;
pub(crate) mod layers;
mod params;
mod velocity;

pub use discriminator::{backbone_layers, init_from_pretrained, DiscTape, DiscTopology, Discriminator, HEAD_BLOCKS};
pub use params::{Gradients, NetParams, TensorId, TensorSpec};
pub use velocity::{Topology, VelocityNet, VelocityTape};

use crate::flowcore::{NoiseLevel, Sample};
use crate::toydata::Prompt;
use crate::Result;

/// `v(x_t, t, c)` for a single sample.
pub fn forward_velocity(net: &VelocityNet, x_t: &Sample, t: NoiseLevel, c: Prompt) -> Result<Sample> {
    let out = net.forward(x_t.as_row(), &[t.get()], &[c])?;
    Ok(Sample::from_row(out.row(0)))
}

/// `x_t - t v(x_t, t, c)` for a single sample.
pub fn generator_predict(net: &VelocityNet, x_t: &Sample, t: NoiseLevel, c: Prompt) -> Result<Sample> {
    let out = net.generator_predict(x_t.as_row(), &[t.get()], &[c])?;
    Ok(Sample::from_row(out.row(0)))
}

pub fn discriminator_logit(disc: &Discriminator, x_s: &Sample, s: NoiseLevel, c: Prompt) -> Result<f64> {
    Ok(disc.logits(x_s.as_row(), &[s.get()], &[c])?[0])
}
