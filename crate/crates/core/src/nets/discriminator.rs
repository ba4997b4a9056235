use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{silu, silu_backward, Affine, Encoder, LayerNorm, LayerNormCache};
use super::params::{Gradients, NetParams};
use super::velocity::{Topology, VelocityNet};
use crate::toydata::Prompt;
use crate::{Error, Result};

pub const HEAD_BLOCKS: usize = 4;

/// Number of pretrained hidden layers the discriminator keeps:
/// `ceil(0.75 * hidden_layers)`.
pub fn backbone_layers(hidden_layers: usize) -> usize {
    (3 * hidden_layers).div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscTopology {
    /// Topology of the velocity network the backbone was cut from.
    pub source: Topology,
    pub backbone_layers: usize,
    pub head_width: usize,
    pub head_blocks: usize,
}

impl DiscTopology {
    pub fn from_source(source: Topology, head_width: usize) -> Self {
        DiscTopology {
            source,
            backbone_layers: backbone_layers(source.hidden_layers),
            head_width,
            head_blocks: HEAD_BLOCKS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        if self.backbone_layers == 0
            || self.backbone_layers > self.source.hidden_layers
            || self.head_width == 0
            || self.head_blocks == 0
        {
            return Err(Error::InvalidArgument(format!(
                "invalid discriminator topology {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DiscLayout {
    encoder: Encoder,
    backbone: Vec<Affine>,
    head: Vec<(Affine, LayerNorm)>,
    out: Affine,
}

impl DiscLayout {
    fn declare(topo: &DiscTopology, p: &mut NetParams) -> Self {
        let src = &topo.source;
        let embed = p.add("embed", &[src.classes, src.embed_dim]);
        let encoder = Encoder {
            embed,
            dim: src.dim,
            time_freqs: src.time_freqs,
        };
        let mut fan_in = src.input_width();
        let mut backbone = Vec::new();
        for i in 0..topo.backbone_layers {
            backbone.push(Affine::declare(p, &format!("backbone.{i}"), fan_in, src.width));
            fan_in = src.width;
        }
        let mut head = Vec::new();
        for j in 0..topo.head_blocks {
            let a = Affine::declare(p, &format!("head.{j}"), fan_in, topo.head_width);
            let n = LayerNorm::declare(p, &format!("head.{j}.norm"), topo.head_width);
            head.push((a, n));
            fan_in = topo.head_width;
        }
        let out = Affine::declare(p, "head.out", fan_in, 1);
        DiscLayout {
            encoder,
            backbone,
            head,
            out,
        }
    }
}

/// Truncated velocity backbone plus a fresh head of
/// affine/normalization/SiLU blocks ending in one logit.
///
/// Higher logits mean "more fake".
#[derive(Debug, Clone)]
pub struct Discriminator {
    topo: DiscTopology,
    params: NetParams,
    layout: DiscLayout,
}

struct HeadCache {
    ln: LayerNormCache,
    normed: Array2<f64>,
}

pub struct DiscTape {
    prompts: Vec<Prompt>,
    /// `acts[0]` is the encoder output; one entry per backbone layer and
    /// head block follows.
    acts: Vec<Array2<f64>>,
    backbone_pre: Vec<Array2<f64>>,
    head: Vec<HeadCache>,
}

impl Discriminator {
    pub fn zeros(topo: DiscTopology) -> Result<Self> {
        topo.validate()?;
        let mut params = NetParams::new();
        let layout = DiscLayout::declare(&topo, &mut params);
        Ok(Discriminator {
            topo,
            params,
            layout,
        })
    }

    /// Random backbone and head (the read-out stays zero).
    pub fn new<R: Rng + ?Sized>(topo: DiscTopology, rng: &mut R) -> Result<Self> {
        let mut d = Self::zeros(topo)?;
        d.layout.encoder.init_embedding(&mut d.params, rng);
        for layer in &d.layout.backbone {
            let bound = (6.0 / layer.fan_in(&d.params) as f64).sqrt();
            layer.init_uniform(&mut d.params, bound, rng);
        }
        d.reset_head(rng);
        Ok(d)
    }

    pub fn from_params(topo: DiscTopology, params: NetParams) -> Result<Self> {
        let mut d = Self::zeros(topo)?;
        if !d.params.same_layout(&params) {
            return Err(Error::InvalidArgument(
                "parameter layout does not match discriminator topology".into(),
            ));
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("discriminator parameters".into()));
        }
        d.params = params;
        Ok(d)
    }

    /// Fan-in scaled uniform head weights, unit norm gains, zero read-out.
    pub fn reset_head<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for (a, n) in &self.layout.head {
            let bound = 1.0 / (a.fan_in(&self.params) as f64).sqrt();
            a.init_uniform(&mut self.params, bound, rng);
            n.reset(&mut self.params);
        }
        self.layout.out.zero(&mut self.params);
    }

    pub fn topology(&self) -> &DiscTopology {
        &self.topo
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetParams {
        &mut self.params
    }

    /// Zeroes the prompt embedding table, making the logit independent of
    /// the prompt.
    pub fn zero_prompt_embedding(&mut self) {
        let e = self.layout.encoder.embed;
        self.params.tensor_mut(e).fill(0.0);
    }

    pub fn forward_tape(
        &self,
        x: ArrayView2<'_, f64>,
        s: &[f64],
        prompts: &[Prompt],
    ) -> Result<(Vec<f64>, DiscTape)> {
        let src = &self.topo.source;
        Error::check_dim(src.dim, x.ncols())?;
        Error::check_dim(x.nrows(), s.len())?;
        Error::check_dim(x.nrows(), prompts.len())?;
        for pr in prompts {
            Prompt::new(pr.class_id(), src.classes)?;
        }
        let p = &self.params;
        let l = &self.layout;
        let mut acts = vec![l.encoder.forward(p, &x, s, prompts)];
        let mut backbone_pre = Vec::new();
        for layer in &l.backbone {
            let z = layer.forward(p, &acts.last().unwrap().view());
            acts.push(silu(&z));
            backbone_pre.push(z);
        }
        let mut head = Vec::new();
        for (a, n) in &l.head {
            let z = a.forward(p, &acts.last().unwrap().view());
            let (normed, ln) = n.forward(p, &z);
            acts.push(silu(&normed));
            head.push(HeadCache { ln, normed });
        }
        let logits = l.out.forward(p, &acts.last().unwrap().view());
        let logits: Vec<f64> = logits.column(0).to_vec();
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("discriminator logit".into()));
        }
        Ok((
            logits,
            DiscTape {
                prompts: prompts.to_vec(),
                acts,
                backbone_pre,
                head,
            },
        ))
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>, s: &[f64], prompts: &[Prompt]) -> Result<Vec<f64>> {
        self.forward_tape(x, s, prompts).map(|(l, _)| l)
    }

    /// Back-propagates per-item logit gradients. Returns the gradient w.r.t.
    /// the input samples when `need_dx`.
    pub fn backward(
        &self,
        tape: &DiscTape,
        d_logits: &[f64],
        mut grads: Option<&mut Gradients>,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        let p = &self.params;
        let l = &self.layout;
        let dy = Array2::from_shape_vec((d_logits.len(), 1), d_logits.to_vec()).expect("column");
        let nb = l.backbone.len();
        let mut da = l
            .out
            .backward(p, &tape.acts.last().unwrap().view(), &dy, grads.as_deref_mut(), true)
            .unwrap();
        for (j, (a, n)) in l.head.iter().enumerate().rev() {
            let c = &tape.head[j];
            let dn = silu_backward(&c.normed, &da);
            let dz = n.backward(p, &c.ln, &dn, grads.as_deref_mut());
            da = a
                .backward(p, &tape.acts[nb + j].view(), &dz, grads.as_deref_mut(), true)
                .unwrap();
        }
        for (i, layer) in l.backbone.iter().enumerate().rev() {
            let dz = silu_backward(&tape.backbone_pre[i], &da);
            da = layer
                .backward(p, &tape.acts[i].view(), &dz, grads.as_deref_mut(), true)
                .unwrap();
        }
        let dx = l.encoder.backward(p, &tape.prompts, &da, grads);
        need_dx.then_some(dx)
    }
}

/// Generator = deep copy of the pretrained net. Discriminator = copy of the
/// prompt embedding and the first `ceil(0.75 H)` hidden layers plus a fresh
/// head.
pub fn init_from_pretrained<R: Rng + ?Sized>(
    pretrained: &VelocityNet,
    head_width: usize,
    rng: &mut R,
) -> Result<(VelocityNet, Discriminator)> {
    if !pretrained.params().is_finite() {
        return Err(Error::NonFinite("pretrained parameters".into()));
    }
    let generator = pretrained.clone();
    let topo = DiscTopology::from_source(*pretrained.topology(), head_width);
    let mut disc = Discriminator::zeros(topo)?;
    let src = pretrained.params();
    let src_layout = &pretrained.layout;
    let dst_layout = disc.layout.clone();
    disc.params
        .copy_tensor(dst_layout.encoder.embed, src, src_layout.encoder.embed);
    for (dst, s) in dst_layout.backbone.iter().zip(&src_layout.hidden) {
        disc.params.copy_tensor(dst.w, src, s.w);
        disc.params.copy_tensor(dst.b, src, s.b);
    }
    disc.reset_head(rng);
    Ok((generator, disc))
}
