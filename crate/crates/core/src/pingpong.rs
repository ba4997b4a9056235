//! Few-step sampling that alternates denoising with re-noising, plus
//! style transfer by starting from a noised reference.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::flowcore::{logsnr_to_t, LogSnrRange, NoiseLevel, Sample};
use crate::seeds;
use crate::toydata::Prompt;
use crate::{Error, Result};

/// Anything that maps a noisy sample at level `t` to a clean estimate.
pub trait Denoiser {
    fn predict_x0(&self, x: ArrayView2<'_, f64>, t: f64, prompts: &[Prompt]) -> Result<Array2<f64>>;
}

impl<F> Denoiser for F
where
    F: Fn(ArrayView2<'_, f64>, f64, &[Prompt]) -> Result<Array2<f64>>,
{
    fn predict_x0(&self, x: ArrayView2<'_, f64>, t: f64, prompts: &[Prompt]) -> Result<Array2<f64>> {
        self(x, t, prompts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleGrid {
    #[default]
    LogSnr,
    UniformT,
}

/// Strictly decreasing noise levels in `(0, 1]`, visited in order.
#[derive(Debug, Clone, PartialEq)]
pub struct PingPongSchedule {
    levels: Vec<f64>,
}

impl PingPongSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("empty ping-pong schedule".into()));
        }
        for &l in &levels {
            if !(l > 0.0 && l <= 1.0) {
                return Err(Error::InvalidNoiseLevel(l));
            }
        }
        if levels.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "schedule must be strictly decreasing: {levels:?}"
            )));
        }
        Ok(PingPongSchedule { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn steps(&self) -> usize {
        self.levels.len()
    }

    /// Keeps the levels at or below `tau`.
    pub fn truncate(&self, tau: NoiseLevel) -> Result<Self> {
        let kept: Vec<f64> = self.levels.iter().copied().filter(|&l| l <= tau.get()).collect();
        if kept.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no schedule level at or below {tau}"
            )));
        }
        PingPongSchedule::new(kept)
    }
}

/// `[1, tau_{N-1}, ..., tau_1]` with the interior levels evenly spaced in
/// log-SNR (or in `t`) inside the range, endpoints excluded.
pub fn make_schedule(n: usize, range: &LogSnrRange, grid: ScheduleGrid) -> Result<PingPongSchedule> {
    if n == 0 {
        return Err(Error::InvalidArgument("ping-pong needs at least one step".into()));
    }
    let mut levels = vec![1.0];
    let (t_lo, t_hi) = range.t_bounds();
    for k in 1..n {
        let frac = k as f64 / n as f64;
        let l = match grid {
            ScheduleGrid::LogSnr => logsnr_to_t(range.lo() + frac * (range.hi() - range.lo())).get(),
            ScheduleGrid::UniformT => t_hi + frac * (t_lo - t_hi),
        };
        levels.push(l);
    }
    PingPongSchedule::new(levels)
}

/// Runs the denoise/re-noise chain on a batch. `eps` supplies the Gaussian
/// draws: the initial state (when `x_init` is absent) and one per re-noise.
fn run<D, E>(
    gen: &D,
    schedule: &PingPongSchedule,
    prompts: &[Prompt],
    x_init: Option<Array2<f64>>,
    dim: usize,
    mut eps: E,
) -> Result<Array2<f64>>
where
    D: Denoiser + ?Sized,
    E: FnMut() -> Array2<f64>,
{
    let mut x = match x_init {
        Some(x) => x,
        None => eps(),
    };
    Error::check_dim(dim, x.ncols())?;
    let levels = schedule.levels();
    for (i, &tau) in levels.iter().enumerate() {
        let x0 = gen.predict_x0(x.view(), tau, prompts)?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("ping-pong output at level {tau}")));
        }
        match levels.get(i + 1) {
            Some(&next) => {
                let e = eps();
                x = x0 * (1.0 - next) + e * next;
            }
            None => return Ok(x0),
        }
    }
    unreachable!("schedule is non-empty")
}

fn gaussian_row<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((1, dim), || rng.sample(StandardNormal))
}

/// Single-sample ping-pong generation.
pub fn pingpong_sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    gen: &D,
    schedule: &PingPongSchedule,
    prompt: Prompt,
    dim: usize,
    rng: &mut R,
    x_init: Option<&Sample>,
) -> Result<Sample> {
    let init = x_init
        .map(|s| Array2::from_shape_vec((1, s.dim()), s.values().to_vec()).expect("row"));
    let out = run(gen, schedule, &[prompt], init, dim, || gaussian_row(dim, rng))?;
    Sample::new(out.row(0).to_vec())
}

/// Batch generation; item `i` draws its noise from a stream seeded by
/// `seeds::derive_index(seed, i)`, so results do not depend on batch
/// composition. All items advance together, one generator call per level.
pub fn pingpong_batch<D: Denoiser + ?Sized>(
    gen: &D,
    schedule: &PingPongSchedule,
    prompts: &[Prompt],
    dim: usize,
    seed: u64,
    x_init: Option<ArrayView2<'_, f64>>,
) -> Result<Array2<f64>> {
    let n = prompts.len();
    if let Some(x) = &x_init {
        Error::check_dim(n, x.nrows())?;
    }
    let mut rngs: Vec<_> = (0..n as u64).map(|i| seeds::rng(seeds::derive_index(seed, i))).collect();
    let eps = move || {
        let mut m = Array2::zeros((n, dim));
        for (mut row, rng) in m.rows_mut().into_iter().zip(rngs.iter_mut()) {
            row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        }
        m
    };
    run(gen, schedule, prompts, x_init.map(|x| x.to_owned()), dim, eps)
}

/// Truncates the schedule at `tau_start` and starts from
/// `(1 - tau_top) x_ref + tau_top eps`.
pub fn style_transfer<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    gen: &D,
    schedule: &PingPongSchedule,
    prompt: Prompt,
    x_ref: &Sample,
    tau_start: NoiseLevel,
    rng: &mut R,
) -> Result<Sample> {
    let sched = schedule.truncate(tau_start)?;
    let top = sched.levels()[0];
    let init: Vec<f64> = x_ref
        .values()
        .iter()
        .map(|&r| (1.0 - top) * r + top * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let init = Sample::new(init)?;
    pingpong_sample(gen, &sched, prompt, x_ref.dim(), rng, Some(&init))
}

/// Batch style transfer with per-item seeded noise.
pub fn style_transfer_batch<D: Denoiser + ?Sized>(
    gen: &D,
    schedule: &PingPongSchedule,
    prompts: &[Prompt],
    x_ref: ArrayView2<'_, f64>,
    tau_start: NoiseLevel,
    seed: u64,
) -> Result<Array2<f64>> {
    Error::check_dim(prompts.len(), x_ref.nrows())?;
    let sched = schedule.truncate(tau_start)?;
    let top = sched.levels()[0];
    let mut init = x_ref.to_owned();
    for (i, mut row) in init.rows_mut().into_iter().enumerate() {
        let mut rng = seeds::rng(seeds::derive(seeds::derive_index(seed, i as u64), "transfer-init"));
        row.iter_mut()
            .for_each(|v| *v = (1.0 - top) * *v + top * rng.sample::<f64, _>(StandardNormal));
    }
    pingpong_batch(gen, &sched, prompts, x_ref.ncols(), seed, Some(init.view()))
}
