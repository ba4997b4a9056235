//! Layer primitives with explicit backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{Gradients, NetParams, TensorId};
use crate::toydata::Prompt;

const LN_EPS: f64 = 1e-5;

/// `y = x W^T + b` with `W` stored `(out, in)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Affine {
    pub w: TensorId,
    pub b: TensorId,
}

impl Affine {
    pub fn declare(p: &mut NetParams, name: &str, input: usize, output: usize) -> Self {
        let w = p.add(format!("{name}.weight"), &[output, input]);
        let b = p.add(format!("{name}.bias"), &[output]);
        Affine { w, b }
    }

    pub fn fan_in(&self, p: &NetParams) -> usize {
        p.spec(self.w).shape[1]
    }

    /// Uniform weights in `[-bound, bound]`, zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(&self, p: &mut NetParams, bound: f64, rng: &mut R) {
        for w in p.tensor_mut(self.w) {
            *w = rng.gen_range(-bound..=bound);
        }
        p.tensor_mut(self.b).fill(0.0);
    }

    pub fn zero(&self, p: &mut NetParams) {
        p.tensor_mut(self.w).fill(0.0);
        p.tensor_mut(self.b).fill(0.0);
    }

    pub fn forward(&self, p: &NetParams, x: &ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&p.mat(self.w).t());
        y += &p.vector(self.b);
        y
    }

    /// Accumulates `dW = dy^T x`, `db = sum_rows dy` into `grads` (when
    /// given) and returns `dx = dy W` when `need_dx`.
    pub fn backward(
        &self,
        p: &NetParams,
        x: &ArrayView2<'_, f64>,
        dy: &Array2<f64>,
        grads: Option<&mut Gradients>,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        if let Some(g) = grads {
            general_mat_mul(1.0, &dy.t(), x, 1.0, &mut g.mat_mut(p, self.w));
            let mut gb = g.vector_mut(p, self.b);
            gb += &dy.sum_axis(Axis(0));
        }
        need_dx.then(|| dy.dot(&p.mat(self.w)))
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::flowcore::sigmoid(x)
}

pub(crate) fn silu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v * sigmoid(v))
}

/// `dz = da * silu'(z)` with `silu'(z) = s (1 + z (1 - s))`.
pub(crate) fn silu_backward(z: &Array2<f64>, da: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(z.dim());
    Zip::from(&mut dz).and(z).and(da).for_each(|o, &z, &d| {
        let s = sigmoid(z);
        *o = d * s * (1.0 + z * (1.0 - s));
    });
    dz
}

/// Per-row normalization over features with learned gain and bias.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerNorm {
    pub gain: TensorId,
    pub bias: TensorId,
}

pub(crate) struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn declare(p: &mut NetParams, name: &str, width: usize) -> Self {
        let gain = p.add(format!("{name}.gain"), &[width]);
        let bias = p.add(format!("{name}.bias"), &[width]);
        p.tensor_mut(gain).fill(1.0);
        LayerNorm { gain, bias }
    }

    pub fn reset(&self, p: &mut NetParams) {
        p.tensor_mut(self.gain).fill(1.0);
        p.tensor_mut(self.bias).fill(0.0);
    }

    pub fn forward(&self, p: &NetParams, z: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let width = z.ncols() as f64;
        let mut xhat = z.clone();
        let mut inv_std = Array1::zeros(z.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / width;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
            *inv = 1.0 / (var + LN_EPS).sqrt();
            let i = *inv;
            row.mapv_inplace(|v| (v - mean) * i);
        }
        let y = &xhat * &p.vector(self.gain) + &p.vector(self.bias);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(
        &self,
        p: &NetParams,
        cache: &LayerNormCache,
        dy: &Array2<f64>,
        grads: Option<&mut Gradients>,
    ) -> Array2<f64> {
        if let Some(g) = grads {
            let mut gg = g.vector_mut(p, self.gain);
            gg += &(dy * &cache.xhat).sum_axis(Axis(0));
            let mut gb = g.vector_mut(p, self.bias);
            gb += &dy.sum_axis(Axis(0));
        }
        let dxhat = dy * &p.vector(self.gain);
        let width = dy.ncols() as f64;
        let mut dz = Array2::zeros(dy.dim());
        for r in 0..dy.nrows() {
            let dh = dxhat.row(r);
            let xh = cache.xhat.row(r);
            let sum_dh = dh.sum();
            let sum_dh_xh = dh.dot(&xh);
            let inv = cache.inv_std[r];
            Zip::from(dz.row_mut(r)).and(&dh).and(&xh).for_each(|o, &d, &x| {
                *o = inv / width * (width * d - sum_dh - x * sum_dh_xh);
            });
        }
        dz
    }
}

/// Geometric frequencies from 1 to 200 rad per unit time.
fn frequency(j: usize, count: usize) -> f64 {
    if count == 1 {
        return 1.0;
    }
    (200f64.ln() * j as f64 / (count - 1) as f64).exp()
}

/// `[sin(w_j t), cos(w_j t)]` for `count` frequencies.
pub(crate) fn time_features(t: &[f64], count: usize) -> Array2<f64> {
    let mut out = Array2::zeros((t.len(), 2 * count));
    for (i, &ti) in t.iter().enumerate() {
        for j in 0..count {
            let a = frequency(j, count) * ti;
            out[[i, j]] = a.sin();
            out[[i, count + j]] = a.cos();
        }
    }
    out
}

/// Input encoder shared by the velocity net and the discriminator backbone:
/// `concat(x, time features, prompt embedding)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Encoder {
    pub embed: TensorId,
    pub dim: usize,
    pub time_freqs: usize,
}

impl Encoder {
    pub fn width(&self, p: &NetParams) -> usize {
        self.dim + 2 * self.time_freqs + p.spec(self.embed).shape[1]
    }

    pub fn init_embedding<R: Rng + ?Sized>(&self, p: &mut NetParams, rng: &mut R) {
        for v in p.tensor_mut(self.embed) {
            *v = rng.sample(StandardNormal);
        }
    }

    pub fn forward(
        &self,
        p: &NetParams,
        x: &ArrayView2<'_, f64>,
        t: &[f64],
        prompts: &[Prompt],
    ) -> Array2<f64> {
        let n = x.nrows();
        let tf = 2 * self.time_freqs;
        let mut feats = Array2::zeros((n, self.width(p)));
        feats.slice_mut(s![.., ..self.dim]).assign(x);
        feats
            .slice_mut(s![.., self.dim..self.dim + tf])
            .assign(&time_features(t, self.time_freqs));
        let table = p.mat(self.embed);
        for (i, pr) in prompts.iter().enumerate() {
            feats
                .slice_mut(s![i, self.dim + tf..])
                .assign(&table.row(pr.class_id()));
        }
        feats
    }

    /// Scatters embedding gradients and returns the gradient w.r.t. `x`.
    pub fn backward(
        &self,
        p: &NetParams,
        prompts: &[Prompt],
        dfeats: &Array2<f64>,
        grads: Option<&mut Gradients>,
    ) -> Array2<f64> {
        let off = self.dim + 2 * self.time_freqs;
        if let Some(g) = grads {
            let mut table = g.mat_mut(p, self.embed);
            for (i, pr) in prompts.iter().enumerate() {
                let mut row = table.row_mut(pr.class_id());
                row += &dfeats.slice(s![i, off..]);
            }
        }
        dfeats.slice(s![.., ..self.dim]).to_owned()
    }
}
