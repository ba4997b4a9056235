use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{silu, silu_backward, Affine, Encoder};
use super::params::{Gradients, NetParams};
use crate::flowcore::VelocityField;
use crate::pingpong::Denoiser;
use crate::toydata::Prompt;
use crate::{Error, Result};

/// Shape of a velocity network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub dim: usize,
    pub classes: usize,
    pub embed_dim: usize,
    pub time_freqs: usize,
    pub width: usize,
    pub hidden_layers: usize,
}

impl Topology {
    pub fn new(dim: usize, classes: usize) -> Self {
        Topology {
            dim,
            classes,
            embed_dim: 16,
            time_freqs: 16,
            width: 128,
            hidden_layers: 6,
        }
    }

    pub fn input_width(&self) -> usize {
        self.dim + 2 * self.time_freqs + self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.dim,
            self.classes,
            self.embed_dim,
            self.time_freqs,
            self.width,
            self.hidden_layers,
        ];
        if counts.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "topology sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct VelocityLayout {
    pub encoder: Encoder,
    pub hidden: Vec<Affine>,
    pub out: Affine,
}

impl VelocityLayout {
    fn declare(topo: &Topology, p: &mut NetParams) -> Self {
        let embed = p.add("embed", &[topo.classes, topo.embed_dim]);
        let encoder = Encoder {
            embed,
            dim: topo.dim,
            time_freqs: topo.time_freqs,
        };
        let mut hidden = Vec::with_capacity(topo.hidden_layers);
        let mut fan_in = topo.input_width();
        for i in 0..topo.hidden_layers {
            hidden.push(Affine::declare(p, &format!("hidden.{i}"), fan_in, topo.width));
            fan_in = topo.width;
        }
        let out = Affine::declare(p, "out", topo.width, topo.dim);
        VelocityLayout {
            encoder,
            hidden,
            out,
        }
    }
}

/// Conditional MLP `v(x_t, t, c)`: `concat(x_t, sin/cos(t), embed[c])`
/// followed by `hidden_layers` SiLU layers and an affine read-out.
#[derive(Debug, Clone)]
pub struct VelocityNet {
    topo: Topology,
    params: NetParams,
    pub(crate) layout: VelocityLayout,
}

/// Activations saved by [`VelocityNet::forward_tape`].
pub struct VelocityTape {
    prompts: Vec<Prompt>,
    /// `acts[0]` is the encoder output, `acts[i + 1] = silu(pre[i])`.
    acts: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl VelocityNet {
    /// He-uniform hidden layers, unit-normal embeddings, and a small
    /// read-out.
    pub fn new<R: Rng + ?Sized>(topo: Topology, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(topo)?;
        let l = &net.layout;
        l.encoder.init_embedding(&mut net.params, rng);
        for layer in &l.hidden {
            let bound = (6.0 / layer.fan_in(&net.params) as f64).sqrt();
            layer.init_uniform(&mut net.params, bound, rng);
        }
        let bound = 1.0 / (l.out.fan_in(&net.params) as f64).sqrt();
        l.out.init_uniform(&mut net.params, bound, rng);
        Ok(net)
    }

    /// All parameters zero.
    pub fn zeros(topo: Topology) -> Result<Self> {
        topo.validate()?;
        let mut params = NetParams::new();
        let layout = VelocityLayout::declare(&topo, &mut params);
        Ok(VelocityNet {
            topo,
            params,
            layout,
        })
    }

    /// Rebuilds a network around stored parameters, checking names and
    /// shapes.
    pub fn from_params(topo: Topology, params: NetParams) -> Result<Self> {
        let mut net = Self::zeros(topo)?;
        if !net.params.same_layout(&params) {
            return Err(Error::InvalidArgument(
                "parameter layout does not match velocity topology".into(),
            ));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("velocity parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetParams {
        &mut self.params
    }

    /// Zeroes the read-out layer so the net outputs 0 everywhere.
    pub fn zero_output(&mut self) {
        self.layout.out.zero(&mut self.params);
    }

    fn check_inputs(&self, x: &ArrayView2<'_, f64>, t: &[f64], prompts: &[Prompt]) -> Result<()> {
        Error::check_dim(self.topo.dim, x.ncols())?;
        Error::check_dim(x.nrows(), t.len())?;
        Error::check_dim(x.nrows(), prompts.len())?;
        for p in prompts {
            Prompt::new(p.class_id(), self.topo.classes)?;
        }
        Ok(())
    }

    pub fn forward_tape(
        &self,
        x: ArrayView2<'_, f64>,
        t: &[f64],
        prompts: &[Prompt],
    ) -> Result<(Array2<f64>, VelocityTape)> {
        self.check_inputs(&x, t, prompts)?;
        let p = &self.params;
        let mut acts = Vec::with_capacity(self.layout.hidden.len() + 1);
        let mut pre = Vec::with_capacity(self.layout.hidden.len());
        acts.push(self.layout.encoder.forward(p, &x, t, prompts));
        for layer in &self.layout.hidden {
            let z = layer.forward(p, &acts.last().unwrap().view());
            acts.push(silu(&z));
            pre.push(z);
        }
        let out = self.layout.out.forward(p, &acts.last().unwrap().view());
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("velocity network output".into()));
        }
        Ok((
            out,
            VelocityTape {
                prompts: prompts.to_vec(),
                acts,
                pre,
            },
        ))
    }

    /// Batched `v(x, t, c)`.
    pub fn forward(&self, x: ArrayView2<'_, f64>, t: &[f64], prompts: &[Prompt]) -> Result<Array2<f64>> {
        self.forward_tape(x, t, prompts).map(|(out, _)| out)
    }

    /// Back-propagates `d_out` (gradient w.r.t. the output). Parameter
    /// gradients are accumulated into `grads` when given; returns the
    /// gradient w.r.t. `x`.
    pub fn backward(
        &self,
        tape: &VelocityTape,
        d_out: &Array2<f64>,
        mut grads: Option<&mut Gradients>,
    ) -> Array2<f64> {
        let p = &self.params;
        let l = &self.layout;
        let mut da = l
            .out
            .backward(p, &tape.acts.last().unwrap().view(), d_out, grads.as_deref_mut(), true)
            .unwrap();
        for (i, layer) in l.hidden.iter().enumerate().rev() {
            let dz = silu_backward(&tape.pre[i], &da);
            da = layer
                .backward(p, &tape.acts[i].view(), &dz, grads.as_deref_mut(), true)
                .unwrap();
        }
        l.encoder.backward(p, &tape.prompts, &da, grads)
    }

    /// Few-step generator view: `x_t - t * v(x_t, t, c)`.
    pub fn generator_predict(
        &self,
        x: ArrayView2<'_, f64>,
        t: &[f64],
        prompts: &[Prompt],
    ) -> Result<Array2<f64>> {
        self.generator_tape(x, t, prompts).map(|(out, _)| out)
    }

    pub(crate) fn generator_tape(
        &self,
        x: ArrayView2<'_, f64>,
        t: &[f64],
        prompts: &[Prompt],
    ) -> Result<(Array2<f64>, VelocityTape)> {
        let (v, tape) = self.forward_tape(x, t, prompts)?;
        let mut out = x.to_owned();
        for ((mut row, vrow), &ti) in out.rows_mut().into_iter().zip(v.rows()).zip(t) {
            row.scaled_add(-ti, &vrow);
        }
        Ok((out, tape))
    }

    /// Parameter gradients of `sum(d_out * generator_predict)`; the
    /// generator output depends on parameters only through `-t * v`.
    pub(crate) fn generator_backward(
        &self,
        tape: &VelocityTape,
        t: &[f64],
        d_out: &Array2<f64>,
        grads: &mut Gradients,
    ) {
        let mut dv = d_out.clone();
        for (mut row, &ti) in dv.axis_iter_mut(Axis(0)).zip(t) {
            row *= -ti;
        }
        self.backward(tape, &dv, Some(grads));
    }
}

impl VelocityField for VelocityNet {
    fn velocity(&self, x: ArrayView2<'_, f64>, t: f64, prompts: &[Prompt]) -> Result<Array2<f64>> {
        self.forward(x, &vec![t; x.nrows()], prompts)
    }
}

impl Denoiser for VelocityNet {
    fn predict_x0(&self, x: ArrayView2<'_, f64>, t: f64, prompts: &[Prompt]) -> Result<Array2<f64>> {
        self.generator_predict(x, &vec![t; x.nrows()], prompts)
    }
}
