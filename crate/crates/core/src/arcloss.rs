//! Training objectives: rectified-flow pretraining, the relativistic
//! adversarial loss, the contrastive discriminator loss, the least-squares
//! ablation, and the alternating generator/discriminator update.
//!
//! Every loss has a `*_with` form taking an explicit noise draw so the same
//! evaluation can be replayed exactly.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::flowcore::{noise_batch, sample_pdisc, sample_pgen, sigmoid, LogSnrRange, LogitNormalSpec};
use crate::nets::{Discriminator, Gradients, VelocityNet};
use crate::optim::AdamW;
use crate::toydata::{LabeledBatch, Prompt};
use crate::{Error, Result};

/// `f(x) = -ln(1 + e^{-x})`, evaluated as `min(x, 0) - ln(1 + e^{-|x|})`.
pub fn f_log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// `f'(x) = sigmoid(-x)`.
fn f_prime(x: f64) -> f64 {
    sigmoid(-x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialKind {
    #[default]
    Relativistic,
    LeastSquares,
}

/// How prompts are shuffled for the contrastive loss. `Identity` exists
/// for tests only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationKind {
    #[default]
    Derangement,
    Uniform,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_c: f64,
    pub gen_range: LogSnrRange,
    pub disc_spec: LogitNormalSpec,
    pub adversarial: AdversarialKind,
    pub permutation: PermutationKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_c: 1.0,
            gen_range: LogSnrRange::default(),
            disc_spec: LogitNormalSpec::default(),
            adversarial: AdversarialKind::Relativistic,
            permutation: PermutationKind::Derangement,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_c >= 0.0 && self.lambda_c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda_c must be finite and >= 0, got {}",
                self.lambda_c
            )));
        }
        Ok(())
    }
}

/// Discriminator logits for one real/generated pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedLogits {
    pub delta_gen: f64,
    pub delta_real: f64,
}

impl PairedLogits {
    pub fn new(delta_gen: f64, delta_real: f64) -> Result<Self> {
        if !(delta_gen.is_finite() && delta_real.is_finite()) {
            return Err(Error::NonFinite("paired logits".into()));
        }
        Ok(PairedLogits { delta_gen, delta_real })
    }

    pub fn margin(&self) -> f64 {
        self.delta_gen - self.delta_real
    }
}

pub fn relativistic_pair_loss(pair: PairedLogits) -> f64 {
    f_log_sigmoid(pair.margin())
}

fn normal_matrix<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

fn check_finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

// ---------------------------------------------------------------------------
// Rectified flow

/// Noise for [`rf_loss_with`]: one level and one Gaussian row per item.
#[derive(Debug, Clone, PartialEq)]
pub struct RfDraw {
    pub t: Vec<f64>,
    pub eps: Array2<f64>,
}

impl RfDraw {
    pub fn sample<R: Rng + ?Sized>(n: usize, dim: usize, range: &LogSnrRange, rng: &mut R) -> Self {
        let t = (0..n).map(|_| sample_pgen(range, rng).get()).collect();
        RfDraw {
            t,
            eps: normal_matrix(n, dim, rng),
        }
    }
}

/// Mean over the batch of `|v(x_t, t, c) - (eps - x0)|^2`, with gradients.
pub fn rf_loss<R: Rng + ?Sized>(
    net: &VelocityNet,
    batch: &LabeledBatch,
    rng: &mut R,
    gen_range: &LogSnrRange,
) -> Result<(f64, Gradients)> {
    let draw = RfDraw::sample(batch.len(), batch.dim(), gen_range, rng);
    rf_loss_with(net, batch, &draw)
}

pub fn rf_loss_with(net: &VelocityNet, batch: &LabeledBatch, draw: &RfDraw) -> Result<(f64, Gradients)> {
    let n = batch.len();
    Error::check_dim(n, draw.t.len())?;
    let x0 = batch.samples();
    let xt = noise_batch(x0, draw.eps.view(), &draw.t);
    let (v, tape) = net.forward_tape(xt.view(), &draw.t, batch.prompts())?;
    let resid = &v - &(&draw.eps - &x0);
    let loss = check_finite("rectified-flow loss", resid.mapv(|r| r * r).sum() / n as f64)?;
    let mut grads = Gradients::zeros_like(net.params());
    net.backward(&tape, &(resid * (2.0 / n as f64)), Some(&mut grads));
    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// Adversarial losses

/// Noise for one adversarial evaluation: generator level `t` with its
/// noise, and one discriminator level `s` per pair shared by the real and
/// generated side, each re-noised with its own Gaussian draw.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialDraw {
    pub t: Vec<f64>,
    pub eps_t: Array2<f64>,
    pub s: Vec<f64>,
    pub eps_real: Array2<f64>,
    pub eps_fake: Array2<f64>,
}

impl AdversarialDraw {
    pub fn sample<R: Rng + ?Sized>(n: usize, dim: usize, cfg: &LossConfig, rng: &mut R) -> Self {
        let t = (0..n).map(|_| sample_pgen(&cfg.gen_range, rng).get()).collect();
        let eps_t = normal_matrix(n, dim, rng);
        let s = (0..n).map(|_| sample_pdisc(&cfg.disc_spec, rng).get()).collect();
        let eps_real = normal_matrix(n, dim, rng);
        let eps_fake = normal_matrix(n, dim, rng);
        AdversarialDraw {
            t,
            eps_t,
            s,
            eps_real,
            eps_fake,
        }
    }
}

/// Result of one adversarial evaluation. For the relativistic loss
/// `disc_loss == gen_loss == L_R` (the discriminator ascends it); for the
/// least-squares loss they are the two separate objectives, each descended.
#[derive(Debug, Clone)]
pub struct AdversarialOutput {
    pub gen_loss: f64,
    pub disc_loss: f64,
    pub pairs: Vec<PairedLogits>,
    /// Gradient of `gen_loss` w.r.t. generator parameters.
    pub gen_grads: Option<Gradients>,
    /// Gradient of `disc_loss` w.r.t. discriminator parameters.
    pub disc_grads: Option<Gradients>,
    /// Noise levels the discriminator saw on the real and generated side.
    pub real_levels: Vec<f64>,
    pub fake_levels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wanted {
    pub gen: bool,
    pub disc: bool,
}

impl Wanted {
    pub const BOTH: Wanted = Wanted { gen: true, disc: true };
    pub const GEN: Wanted = Wanted { gen: true, disc: false };
    pub const DISC: Wanted = Wanted { gen: false, disc: true };
}

/// Relativistic loss with both gradient sets from one evaluation.
pub fn compute_lr<R: Rng + ?Sized>(
    gen: &VelocityNet,
    disc: &Discriminator,
    batch: &LabeledBatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<AdversarialOutput> {
    let draw = AdversarialDraw::sample(batch.len(), batch.dim(), cfg, rng);
    adversarial_with(gen, disc, batch, &draw, AdversarialKind::Relativistic, Wanted::BOTH)
}

/// Least-squares ablation: the discriminator minimizes
/// `D_real^2 + (D_gen - 1)^2`, the generator minimizes `D_gen^2`.
pub fn compute_ls<R: Rng + ?Sized>(
    gen: &VelocityNet,
    disc: &Discriminator,
    batch: &LabeledBatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<AdversarialOutput> {
    let draw = AdversarialDraw::sample(batch.len(), batch.dim(), cfg, rng);
    adversarial_with(gen, disc, batch, &draw, AdversarialKind::LeastSquares, Wanted::BOTH)
}

pub fn adversarial_with(
    gen: &VelocityNet,
    disc: &Discriminator,
    batch: &LabeledBatch,
    draw: &AdversarialDraw,
    kind: AdversarialKind,
    wanted: Wanted,
) -> Result<AdversarialOutput> {
    let n = batch.len();
    Error::check_dim(n, draw.t.len())?;
    Error::check_dim(n, draw.s.len())?;
    let x0 = batch.samples();
    let prompts = batch.prompts();

    let xt = noise_batch(x0, draw.eps_t.view(), &draw.t);
    let (x_hat, gtape) = gen.generator_tape(xt.view(), &draw.t, prompts)?;
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("generator output".into()));
    }
    let real_s = noise_batch(x0, draw.eps_real.view(), &draw.s);
    let fake_s = noise_batch(x_hat.view(), draw.eps_fake.view(), &draw.s);
    let real_levels = draw.s.clone();
    let fake_levels = draw.s.clone();
    let (d_real, rtape) = disc.forward_tape(real_s.view(), &real_levels, prompts)?;
    let (d_gen, ftape) = disc.forward_tape(fake_s.view(), &fake_levels, prompts)?;
    let pairs = d_gen
        .iter()
        .zip(&d_real)
        .map(|(&g, &r)| PairedLogits::new(g, r))
        .collect::<Result<Vec<_>>>()?;

    let inv_n = 1.0 / n as f64;
    // Per-item derivatives of (gen_loss, disc_loss) w.r.t. (D_gen, D_real).
    let (gen_loss, disc_loss, g_fake, d_fake, d_real_grad) = match kind {
        AdversarialKind::Relativistic => {
            let loss = pairs.iter().map(|p| relativistic_pair_loss(*p)).sum::<f64>() * inv_n;
            let fp: Vec<f64> = pairs.iter().map(|p| f_prime(p.margin()) * inv_n).collect();
            let neg: Vec<f64> = fp.iter().map(|v| -v).collect();
            (loss, loss, fp.clone(), fp, neg)
        }
        AdversarialKind::LeastSquares => {
            let gl = pairs.iter().map(|p| p.delta_gen * p.delta_gen).sum::<f64>() * inv_n;
            let dl = pairs
                .iter()
                .map(|p| p.delta_real * p.delta_real + (p.delta_gen - 1.0).powi(2))
                .sum::<f64>()
                * inv_n;
            (
                gl,
                dl,
                pairs.iter().map(|p| 2.0 * p.delta_gen * inv_n).collect(),
                pairs.iter().map(|p| 2.0 * (p.delta_gen - 1.0) * inv_n).collect(),
                pairs.iter().map(|p| 2.0 * p.delta_real * inv_n).collect(),
            )
        }
    };
    check_finite("generator loss", gen_loss)?;
    check_finite("discriminator loss", disc_loss)?;

    let disc_grads = if wanted.disc {
        let mut g = Gradients::zeros_like(disc.params());
        disc.backward(&rtape, &d_real_grad, Some(&mut g), false);
        disc.backward(&ftape, &d_fake, Some(&mut g), false);
        Some(g)
    } else {
        None
    };
    let gen_grads = if wanted.gen {
        let mut dx = disc.backward(&ftape, &g_fake, None, true).expect("input gradient");
        for (mut row, &s) in dx.axis_iter_mut(Axis(0)).zip(&draw.s) {
            row *= 1.0 - s;
        }
        let mut g = Gradients::zeros_like(gen.params());
        gen.generator_backward(&gtape, &draw.t, &dx, &mut g);
        Some(g)
    } else {
        None
    };
    Ok(AdversarialOutput {
        gen_loss,
        disc_loss,
        pairs,
        gen_grads,
        disc_grads,
        real_levels,
        fake_levels,
    })
}

// ---------------------------------------------------------------------------
// Contrastive loss

/// Uniform random permutation with no fixed points, by rejection.
pub fn random_derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: n });
    }
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return Ok(p);
        }
    }
}

pub fn make_permutation<R: Rng + ?Sized>(n: usize, kind: PermutationKind, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: n });
    }
    match kind {
        PermutationKind::Derangement => random_derangement(n, rng),
        PermutationKind::Uniform => {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(rng);
            Ok(p)
        }
        PermutationKind::Identity => Ok((0..n).collect()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveDraw {
    pub s: Vec<f64>,
    pub eps: Array2<f64>,
    pub permutation: Vec<usize>,
}

impl ContrastiveDraw {
    pub fn sample<R: Rng + ?Sized>(
        n: usize,
        dim: usize,
        disc_spec: &LogitNormalSpec,
        kind: PermutationKind,
        rng: &mut R,
    ) -> Result<Self> {
        let permutation = make_permutation(n, kind, rng)?;
        let s = (0..n).map(|_| sample_pdisc(disc_spec, rng).get()).collect();
        Ok(ContrastiveDraw {
            s,
            eps: normal_matrix(n, dim, rng),
            permutation,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub grads: Option<Gradients>,
    pub permutation: Vec<usize>,
}

/// Mean of `f(D(x_s, s, P[c]) - D(x_s, s, c))` over real data; the same
/// noised input is scored under both prompts. Only the discriminator is
/// involved.
pub fn compute_lc<R: Rng + ?Sized>(
    disc: &Discriminator,
    batch: &LabeledBatch,
    rng: &mut R,
    disc_spec: &LogitNormalSpec,
    permutation: PermutationKind,
) -> Result<ContrastiveOutput> {
    if batch.len() < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: batch.len() });
    }
    let draw = ContrastiveDraw::sample(batch.len(), batch.dim(), disc_spec, permutation, rng)?;
    compute_lc_with(disc, batch, &draw, true)
}

pub fn compute_lc_with(
    disc: &Discriminator,
    batch: &LabeledBatch,
    draw: &ContrastiveDraw,
    want_grads: bool,
) -> Result<ContrastiveOutput> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: n });
    }
    Error::check_dim(n, draw.s.len())?;
    Error::check_dim(n, draw.permutation.len())?;
    let prompts = batch.prompts();
    let shuffled: Vec<Prompt> = draw.permutation.iter().map(|&j| prompts[j]).collect();
    let xs = noise_batch(batch.samples(), draw.eps.view(), &draw.s);
    let (matched, mtape) = disc.forward_tape(xs.view(), &draw.s, prompts)?;
    let (mismatched, xtape) = disc.forward_tape(xs.view(), &draw.s, &shuffled)?;
    let inv_n = 1.0 / n as f64;
    let margins: Vec<f64> = mismatched.iter().zip(&matched).map(|(a, b)| a - b).collect();
    let loss = check_finite(
        "contrastive loss",
        margins.iter().map(|&m| f_log_sigmoid(m)).sum::<f64>() * inv_n,
    )?;
    let grads = want_grads.then(|| {
        let fp: Vec<f64> = margins.iter().map(|&m| f_prime(m) * inv_n).collect();
        let neg: Vec<f64> = fp.iter().map(|v| -v).collect();
        let mut g = Gradients::zeros_like(disc.params());
        disc.backward(&xtape, &fp, Some(&mut g), false);
        disc.backward(&mtape, &neg, Some(&mut g), false);
        g
    });
    Ok(ContrastiveOutput {
        loss,
        grads,
        permutation: draw.permutation.clone(),
    })
}

// ---------------------------------------------------------------------------
// Alternating updates

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    #[default]
    GenThenDisc,
    DiscThenGen,
}

#[derive(Debug, Clone)]
pub struct ArcState {
    pub gen: VelocityNet,
    pub disc: Discriminator,
    pub gen_opt: AdamW,
    pub disc_opt: AdamW,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepStats {
    pub gen_loss: f64,
    pub disc_adversarial_loss: f64,
    pub contrastive_loss: Option<f64>,
    /// Mean logits seen in the discriminator half-step.
    pub mean_delta_gen: f64,
    pub mean_delta_real: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscStepStats {
    pub adversarial_loss: f64,
    pub contrastive_loss: Option<f64>,
    pub mean_delta_gen: f64,
    pub mean_delta_real: f64,
}

/// Generator half-step: descends the adversarial generator loss with the
/// discriminator frozen. Returns the loss before the update.
pub fn gen_half_step<R: Rng + ?Sized>(
    state: &mut ArcState,
    batch: &LabeledBatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<f64> {
    let draw = AdversarialDraw::sample(batch.len(), batch.dim(), cfg, rng);
    let out = adversarial_with(&state.gen, &state.disc, batch, &draw, cfg.adversarial, Wanted::GEN)?;
    let grads = out.gen_grads.expect("requested");
    state.gen_opt.step(state.gen.params_mut(), &grads)?;
    Ok(out.gen_loss)
}

/// Discriminator half-step with the generator frozen. Relativistic: descends
/// `-(L_R + lambda L_C)`; least squares: descends `L_LS - lambda L_C`.
/// Losses are those before the update.
pub fn disc_half_step<R: Rng + ?Sized>(
    state: &mut ArcState,
    batch: &LabeledBatch,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<DiscStepStats> {
    let draw = AdversarialDraw::sample(batch.len(), batch.dim(), cfg, rng);
    let out = adversarial_with(&state.gen, &state.disc, batch, &draw, cfg.adversarial, Wanted::DISC)?;
    let mut grads = out.disc_grads.expect("requested");
    if cfg.adversarial == AdversarialKind::Relativistic {
        grads.scale(-1.0);
    }
    let mut lc = None;
    if cfg.lambda_c > 0.0 {
        let c = compute_lc(&state.disc, batch, rng, &cfg.disc_spec, cfg.permutation)?;
        grads.add_scaled(-cfg.lambda_c, c.grads.as_ref().expect("requested"));
        lc = Some(c.loss);
    }
    let n = out.pairs.len() as f64;
    let stats = DiscStepStats {
        adversarial_loss: out.disc_loss,
        contrastive_loss: lc,
        mean_delta_gen: out.pairs.iter().map(|p| p.delta_gen).sum::<f64>() / n,
        mean_delta_real: out.pairs.iter().map(|p| p.delta_real).sum::<f64>() / n,
    };
    state.disc_opt.step(state.disc.params_mut(), &grads)?;
    Ok(stats)
}

/// One generator and one discriminator update, each on its own batch and
/// fresh noise.
pub fn arc_step<R: Rng + ?Sized>(
    state: &mut ArcState,
    batch_g: &LabeledBatch,
    batch_d: &LabeledBatch,
    cfg: &LossConfig,
    order: UpdateOrder,
    rng: &mut R,
) -> Result<StepStats> {
    cfg.validate()?;
    let mut stats = StepStats::default();
    let disc = |state: &mut ArcState, rng: &mut R, stats: &mut StepStats| -> Result<()> {
        let d = disc_half_step(state, batch_d, cfg, rng)?;
        stats.disc_adversarial_loss = d.adversarial_loss;
        stats.contrastive_loss = d.contrastive_loss;
        stats.mean_delta_gen = d.mean_delta_gen;
        stats.mean_delta_real = d.mean_delta_real;
        Ok(())
    };
    match order {
        UpdateOrder::GenThenDisc => {
            stats.gen_loss = gen_half_step(state, batch_g, cfg, rng)?;
            disc(state, rng, &mut stats)?;
        }
        UpdateOrder::DiscThenGen => {
            disc(state, rng, &mut stats)?;
            stats.gen_loss = gen_half_step(state, batch_g, cfg, rng)?;
        }
    }
    Ok(stats)
}
