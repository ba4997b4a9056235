//! Synthetic conditional data: every prompt class is a Gaussian mixture with
//! at least two modes, so both adherence and within-class diversity are
//! measurable.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::flowcore::Sample;
use crate::{Error, Result};

/// A discrete condition class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prompt(usize);

impl Prompt {
    pub fn new(class_id: usize, classes: usize) -> Result<Self> {
        if class_id < classes {
            Ok(Prompt(class_id))
        } else {
            Err(Error::PromptOutOfRange { class_id, classes })
        }
    }

    pub fn class_id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Per-class isotropic Gaussian mixtures with equal mode weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMixtureSpec {
    dim: usize,
    classes: Vec<Vec<Mode>>,
}

impl ConditionalMixtureSpec {
    pub fn new(dim: usize, classes: Vec<Vec<Mode>>) -> Result<Self> {
        if dim == 0 || classes.is_empty() {
            return Err(Error::InvalidArgument(
                "mixture needs dim >= 1 and at least one class".into(),
            ));
        }
        for (k, modes) in classes.iter().enumerate() {
            if modes.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "class {k} has {} modes; at least 2 are required",
                    modes.len()
                )));
            }
            for m in modes {
                Error::check_dim(dim, m.mean.len())?;
                if !(m.std > 0.0 && m.std.is_finite()) || m.mean.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "class {k}: mode std must be > 0 and means finite"
                    )));
                }
            }
        }
        Ok(ConditionalMixtureSpec { dim, classes })
    }

    /// `classes * modes_per_class` modes evenly spaced on a circle in 2-D;
    /// class `k` owns modes `k*m .. (k+1)*m`.
    pub fn ring(classes: usize, modes_per_class: usize, radius: f64, std: f64) -> Result<Self> {
        let total = classes * modes_per_class;
        let modes: Vec<Mode> = (0..total)
            .map(|i| {
                let angle = 2.0 * PI * i as f64 / total as f64;
                Mode {
                    mean: vec![radius * angle.cos(), radius * angle.sin()],
                    std,
                }
            })
            .collect();
        let classes = modes
            .chunks(modes_per_class.max(1))
            .map(|c| c.to_vec())
            .collect();
        Self::new(2, classes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn modes(&self, prompt: Prompt) -> &[Mode] {
        &self.classes[prompt.0]
    }

    pub fn prompt(&self, class_id: usize) -> Result<Prompt> {
        Prompt::new(class_id, self.num_classes())
    }

    pub fn prompts(&self) -> impl Iterator<Item = Prompt> {
        (0..self.num_classes()).map(Prompt)
    }

    fn check(&self, prompt: Prompt) -> Result<()> {
        Prompt::new(prompt.0, self.num_classes()).map(|_| ())
    }
}

/// Four classes in 2-D: eight modes on a radius-4 ring (std 0.25), two
/// adjacent modes per class.
pub fn default_spec() -> ConditionalMixtureSpec {
    ConditionalMixtureSpec::ring(4, 2, 4.0, 0.25).expect("default spec is valid")
}

/// Equal-length samples and prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    samples: Array2<f64>,
    prompts: Vec<Prompt>,
}

impl LabeledBatch {
    pub fn new(samples: Array2<f64>, prompts: Vec<Prompt>) -> Result<Self> {
        Error::check_dim(samples.nrows(), prompts.len())?;
        if prompts.is_empty() {
            return Err(Error::BatchTooSmall { need: 1, got: 0 });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("batch samples".into()));
        }
        Ok(LabeledBatch { samples, prompts })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn prompts(&self) -> &[Prompt] {
        &self.prompts
    }

    /// Rows belonging to `prompt`, in batch order.
    pub fn rows_for(&self, prompt: Prompt) -> Vec<Vec<f64>> {
        self.prompts
            .iter()
            .zip(self.samples.rows())
            .filter(|(p, _)| **p == prompt)
            .map(|(_, r)| r.to_vec())
            .collect()
    }

    /// Writes `class_id,x0,x1,...` CSV, one sample per row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_sample_csv(path, self, None)
    }

    pub fn read_csv(path: &Path, classes: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        let class_col = headers
            .iter()
            .position(|h| h == "class_id" || h == "prompt_id")
            .ok_or_else(|| Error::InvalidArgument(format!("{}: no class_id column", path.display())))?;
        let coord_cols: Vec<usize> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with('x') && h[1..].parse::<usize>().is_ok())
            .map(|(i, _)| i)
            .collect();
        let mut values = Vec::new();
        let mut prompts = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record[i].trim().parse::<f64>().map_err(|e| {
                    Error::InvalidArgument(format!("{}: bad number {:?}: {e}", path.display(), &record[i]))
                })
            };
            let class_id = parse(class_col)? as usize;
            prompts.push(Prompt::new(class_id, classes)?);
            for &c in &coord_cols {
                values.push(parse(c)?);
            }
        }
        let samples = Array2::from_shape_vec((prompts.len(), coord_cols.len()), values)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        LabeledBatch::new(samples, prompts)
    }
}

/// Sample CSV with an optional trailing `seed` column.
pub fn write_sample_csv(path: &Path, batch: &LabeledBatch, seed: Option<u64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let first = if seed.is_some() { "prompt_id" } else { "class_id" };
    let mut header = vec![first.to_string()];
    header.extend((0..batch.dim()).map(|k| format!("x{k}")));
    if seed.is_some() {
        header.push("seed".into());
    }
    w.write_record(&header)?;
    for (p, row) in batch.prompts.iter().zip(batch.samples.rows()) {
        let mut rec = vec![p.0.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        if let Some(s) = seed {
            rec.push(s.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Picks a mode of the class uniformly, then adds isotropic Gaussian noise.
pub fn sample_real<R: Rng + ?Sized>(
    spec: &ConditionalMixtureSpec,
    prompt: Prompt,
    rng: &mut R,
) -> Result<Sample> {
    spec.check(prompt)?;
    Ok(Sample::new(draw(spec, prompt, rng)).expect("finite draw"))
}

fn draw<R: Rng + ?Sized>(spec: &ConditionalMixtureSpec, prompt: Prompt, rng: &mut R) -> Vec<f64> {
    let modes = spec.modes(prompt);
    let mode = &modes[rng.gen_range(0..modes.len())];
    mode.mean
        .iter()
        .map(|&m| m + mode.std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `n` samples with prompts drawn uniformly over classes.
pub fn sample_batch<R: Rng + ?Sized>(
    spec: &ConditionalMixtureSpec,
    n: usize,
    rng: &mut R,
) -> Result<LabeledBatch> {
    let k = spec.num_classes();
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut prompts = Vec::with_capacity(n);
    for _ in 0..n {
        let p = Prompt(rng.gen_range(0..k));
        values.extend(draw(spec, p, rng));
        prompts.push(p);
    }
    LabeledBatch::new(
        Array2::from_shape_vec((n, spec.dim), values).expect("shape"),
        prompts,
    )
}

/// `per_class` samples of every class, grouped by class in ascending order.
pub fn sample_balanced<R: Rng + ?Sized>(
    spec: &ConditionalMixtureSpec,
    per_class: usize,
    rng: &mut R,
) -> Result<LabeledBatch> {
    let mut values = Vec::new();
    let mut prompts = Vec::new();
    for p in spec.prompts() {
        for _ in 0..per_class {
            values.extend(draw(spec, p, rng));
            prompts.push(p);
        }
    }
    LabeledBatch::new(
        Array2::from_shape_vec((prompts.len(), spec.dim), values).expect("shape"),
        prompts,
    )
}

/// Exact mean and covariance of a class mixture:
/// `mu = avg(mu_i)`, `Sigma = avg(sigma_i^2 I + mu_i mu_i^T) - mu mu^T`.
pub fn ground_truth_stats(
    spec: &ConditionalMixtureSpec,
    prompt: Prompt,
) -> Result<(Vec<f64>, Array2<f64>)> {
    spec.check(prompt)?;
    let modes = spec.modes(prompt);
    let d = spec.dim;
    let w = 1.0 / modes.len() as f64;
    let mut mean = vec![0.0; d];
    let mut second = Array2::<f64>::zeros((d, d));
    for m in modes {
        for i in 0..d {
            mean[i] += w * m.mean[i];
            second[[i, i]] += w * m.std * m.std;
            for j in 0..d {
                second[[i, j]] += w * m.mean[i] * m.mean[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            second[[i, j]] -= mean[i] * mean[j];
        }
    }
    Ok((mean, second))
}

/// Class of the nearest mode mean.
pub fn nearest_mode_class(spec: &ConditionalMixtureSpec, x: &[f64]) -> Prompt {
    let mut best = (f64::INFINITY, 0);
    for (k, modes) in spec.classes.iter().enumerate() {
        for m in modes {
            let d2: f64 = m.mean.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, k);
            }
        }
    }
    Prompt(best.1)
}
