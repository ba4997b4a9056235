//! Rectified-flow core: the linear noising process, time/log-SNR
//! conversions, training-time timestep distributions and the Euler sampler.
//!
//! Time runs from `t = 0` (data) to `t = 1` (noise) and the interpolant is
//! `x_t = (1 - t) x0 + t eps`. Log-SNR uses `SNR(t) = ((1 - t) / t)^2`, so
//! `logsnr = 2 ln((1 - t) / t)`.

use std::fmt;

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::toydata::Prompt;
use crate::{Error, Result};

/// A point in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample(Vec<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample".into()));
        }
        Ok(Sample(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Sample(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    /// Draws `eps ~ N(0, I)` in `dim` dimensions.
    pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Sample((0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect())
    }

    pub(crate) fn as_row(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((1, self.0.len()), &self.0).expect("row view")
    }

    pub(crate) fn from_row(row: ndarray::ArrayView1<'_, f64>) -> Self {
        Sample(row.to_vec())
    }
}

impl From<Sample> for Vec<f64> {
    fn from(s: Sample) -> Self {
        s.0
    }
}

/// Noise level `t` in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub const DATA: NoiseLevel = NoiseLevel(0.0);
    pub const NOISE: NoiseLevel = NoiseLevel(1.0);

    pub fn new(t: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&t) {
            Ok(NoiseLevel(t))
        } else {
            Err(Error::InvalidNoiseLevel(t))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for NoiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={}", self.0)
    }
}

/// Closed log-SNR interval used for uniform-in-log-SNR sampling and grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSnrRange {
    lo: f64,
    hi: f64,
}

impl LogSnrRange {
    /// `lo == hi` is accepted as a point mass.
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "log-SNR range [{lo}, {hi}] must be finite with lo <= hi"
            )));
        }
        Ok(LogSnrRange { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Range in `t`: `(t(hi), t(lo))`.
    pub fn t_bounds(&self) -> (f64, f64) {
        (logsnr_to_t(self.hi).get(), logsnr_to_t(self.lo).get())
    }
}

impl Default for LogSnrRange {
    fn default() -> Self {
        LogSnrRange { lo: -6.0, hi: 2.0 }
    }
}

/// Logit-normal timestep law with a rational shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitNormalSpec {
    mean: f64,
    std: f64,
    shift: f64,
}

impl LogitNormalSpec {
    pub fn new(mean: f64, std: f64, shift: f64) -> Result<Self> {
        if !mean.is_finite() || !(std > 0.0 && std.is_finite()) || !(shift > 0.0 && shift.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "logit-normal needs finite mean, std > 0, shift > 0 (got {mean}, {std}, {shift})"
            )));
        }
        Ok(LogitNormalSpec { mean, std, shift })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }
}

impl Default for LogitNormalSpec {
    fn default() -> Self {
        LogitNormalSpec {
            mean: 0.0,
            std: 1.0,
            shift: 0.5,
        }
    }
}

/// `(1 - t) x0 + t eps`.
pub fn noise(x0: &Sample, eps: &Sample, t: NoiseLevel) -> Result<Sample> {
    Error::check_dim(x0.dim(), eps.dim())?;
    let t = t.get();
    Ok(Sample(
        x0.0.iter()
            .zip(&eps.0)
            .map(|(&a, &e)| (1.0 - t) * a + t * e)
            .collect(),
    ))
}

/// Row-wise noising of a batch; `t[i]` applies to row `i`.
pub fn noise_batch(x0: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, t: &[f64]) -> Array2<f64> {
    assert_eq!(x0.dim(), eps.dim());
    assert_eq!(x0.nrows(), t.len());
    let mut out = Array2::zeros(x0.dim());
    Zip::from(out.rows_mut())
        .and(x0.rows())
        .and(eps.rows())
        .and(t)
        .for_each(|mut o, a, e, &t| {
            Zip::from(&mut o)
                .and(&a)
                .and(&e)
                .for_each(|o, &a, &e| *o = (1.0 - t) * a + t * e);
        });
    out
}

/// Flow velocity `eps - x0`.
pub fn velocity_target(x0: &Sample, eps: &Sample) -> Result<Sample> {
    Error::check_dim(x0.dim(), eps.dim())?;
    Ok(Sample(x0.0.iter().zip(&eps.0).map(|(&a, &e)| e - a).collect()))
}

/// Clean-sample estimate implied by a velocity: `x_t - t v`.
pub fn clean_estimate(x_t: &Sample, t: NoiseLevel, v: &Sample) -> Result<Sample> {
    Error::check_dim(x_t.dim(), v.dim())?;
    let t = t.get();
    Ok(Sample(x_t.0.iter().zip(&v.0).map(|(&x, &v)| x - t * v).collect()))
}

/// `t = 1 / (1 + exp(lam / 2))`.
pub fn logsnr_to_t(lam: f64) -> NoiseLevel {
    // Split on sign so neither branch overflows.
    let half = 0.5 * lam;
    let t = if half >= 0.0 {
        let e = (-half).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + half.exp())
    };
    NoiseLevel(t)
}

/// `lam = 2 ln((1 - t) / t)`; infinite at the endpoints.
pub fn t_to_logsnr(t: NoiseLevel) -> Result<f64> {
    let t = t.get();
    if t <= 0.0 || t >= 1.0 {
        return Err(Error::InfiniteLogSnr(t));
    }
    Ok(2.0 * ((1.0 - t).ln() - t.ln()))
}

/// Draws `t` with log-SNR uniform on the range.
pub fn sample_pgen<R: Rng + ?Sized>(range: &LogSnrRange, rng: &mut R) -> NoiseLevel {
    if range.lo == range.hi {
        return logsnr_to_t(range.lo);
    }
    let u: f64 = rng.gen();
    logsnr_to_t(range.lo + (range.hi - range.lo) * u)
}

/// Applies the rational shift `shift * t / (1 + (shift - 1) t)`.
pub fn shift_t(t: f64, shift: f64) -> f64 {
    shift * t / (1.0 + (shift - 1.0) * t)
}

/// `sigmoid(u)` for `u ~ N(mean, std^2)`, then shifted.
pub fn sample_pdisc<R: Rng + ?Sized>(spec: &LogitNormalSpec, rng: &mut R) -> NoiseLevel {
    let normal = Normal::new(spec.mean, spec.std).expect("validated spec");
    let u = normal.sample(rng);
    NoiseLevel(shift_t(sigmoid(u), spec.shift))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A batched velocity model `v(x, t, c)` with one shared `t` per call.
pub trait VelocityField {
    fn velocity(
        &self,
        x: ArrayView2<'_, f64>,
        t: f64,
        prompts: &[Prompt],
    ) -> Result<Array2<f64>>;
}

impl<F> VelocityField for F
where
    F: Fn(ArrayView2<'_, f64>, f64, &[Prompt]) -> Result<Array2<f64>>,
{
    fn velocity(
        &self,
        x: ArrayView2<'_, f64>,
        t: f64,
        prompts: &[Prompt],
    ) -> Result<Array2<f64>> {
        self(x, t, prompts)
    }
}

/// Time grid for the Euler sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerGrid {
    #[default]
    UniformT,
    UniformLogSnr,
}

/// Upper log-SNR end of the log-SNR Euler grid before the final jump to 0.
const EULER_LOGSNR_MAX: f64 = 12.0;
/// Largest `t` the log-SNR grid converts; `t = 1` has infinite log-SNR.
const EULER_T_CLAMP: f64 = 1.0 - 1e-6;

/// Decreasing times `t_start = g[0] > ... > g[steps] = 0`.
pub fn euler_grid(t_start: f64, steps: usize, grid: EulerGrid) -> Vec<f64> {
    let mut ts = Vec::with_capacity(steps + 1);
    match grid {
        EulerGrid::UniformT => {
            for i in 0..steps {
                ts.push(t_start * (1.0 - i as f64 / steps as f64));
            }
        }
        EulerGrid::UniformLogSnr => {
            ts.push(t_start);
            let lo = t_to_logsnr(NoiseLevel(t_start.min(EULER_T_CLAMP)))
                .expect("t_start in (0, 1)");
            let hi = EULER_LOGSNR_MAX.max(lo);
            for i in 1..steps {
                let lam = lo + (hi - lo) * i as f64 / steps as f64;
                ts.push(logsnr_to_t(lam).get().min(t_start));
            }
        }
    }
    ts.push(0.0);
    ts
}

/// Integrates the flow ODE from `t_start` down to 0 with `steps` explicit
/// Euler steps: `x <- x - (t_i - t_{i+1}) v(x, t_i, c)`.
pub fn euler_sample<V: VelocityField + ?Sized>(
    field: &V,
    x_start: ArrayView2<'_, f64>,
    prompts: &[Prompt],
    steps: usize,
    t_start: NoiseLevel,
    grid: EulerGrid,
) -> Result<Array2<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("euler_sample needs steps >= 1".into()));
    }
    Error::check_dim(x_start.nrows(), prompts.len())?;
    let mut x = x_start.to_owned();
    if t_start.get() == 0.0 {
        return Ok(x);
    }
    let ts = euler_grid(t_start.get(), steps, grid);
    for w in ts.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let v = field.velocity(x.view(), t, prompts)?;
        Error::check_dim(x.ncols(), v.ncols())?;
        if v.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite(format!("velocity at t={t}")));
        }
        x.scaled_add(-(t - t_next), &v);
    }
    Ok(x)
}
