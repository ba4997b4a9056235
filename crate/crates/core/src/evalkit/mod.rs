//! Evaluation metrics on sample sets. Sets are matrices with one point
//! per row.

mod classifier;
mod report;

pub use classifier::{adherence_score, Classifier, ClassifierConfig, MlpClassifier, UniformClassifier};
pub use report::{time_per_sample, timing_report, MetricReport, TimingReport, METRIC_SCHEMA_VERSION};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Maps samples to unit-norm feature vectors.
pub trait EmbeddingFn {
    fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

/// The samples themselves, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEmbedding;

impl EmbeddingFn for IdentityEmbedding {
    fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(normalize_rows(x.to_owned()))
    }
}

/// Scales every row to unit length. A zero row maps to the first basis
/// vector so the output is always unit-norm.
pub fn normalize_rows(mut x: Array2<f64>) -> Array2<f64> {
    for mut row in x.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        } else {
            row.fill(0.0);
            row[0] = 1.0;
        }
    }
    x
}

fn cosine_distance(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    1.0 - a.dot(&b) / (na * nb)
}

/// Mean over groups of the mean pairwise cosine distance within a group.
pub fn ccds(groups: &[Array2<f64>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("ccds needs at least one group".into()));
    }
    let mut total = 0.0;
    for g in groups {
        let n = g.nrows();
        if n < 2 {
            return Err(Error::BatchTooSmall { need: 2, got: n });
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += cosine_distance(g.row(i), g.row(j));
            }
        }
        total += sum / (n * (n - 1) / 2) as f64;
    }
    Ok(total / groups.len() as f64)
}

fn distance(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from each point to its k-th nearest neighbour in the same set
/// (the point itself excluded).
pub fn knn_radii(set: ArrayView2<'_, f64>, k: usize) -> Result<Vec<f64>> {
    let n = set.nrows();
    if k == 0 || n < k + 1 {
        return Err(Error::BatchTooSmall { need: k + 1, got: n });
    }
    let mut d = vec![0.0; n - 1];
    Ok((0..n)
        .map(|i| {
            let mut m = 0;
            for j in 0..n {
                if j != i {
                    d[m] = distance(set.row(i), set.row(j));
                    m += 1;
                }
            }
            *d.select_nth_unstable_by(k - 1, f64::total_cmp).1
        })
        .collect())
}

fn check_sets(real: &ArrayView2<'_, f64>, gen: &ArrayView2<'_, f64>, k: usize) -> Result<()> {
    Error::check_dim(real.ncols(), gen.ncols())?;
    for n in [real.nrows(), gen.nrows()] {
        if k == 0 || n < k + 1 {
            return Err(Error::BatchTooSmall { need: k + 1, got: n });
        }
    }
    Ok(())
}

/// Fraction of real points inside the generated manifold: the union of
/// balls around generated points with their k-NN radius.
pub fn recall(real: ArrayView2<'_, f64>, gen: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    check_sets(&real, &gen, k)?;
    let radii = knn_radii(gen, k)?;
    let hits = real
        .rows()
        .into_iter()
        .filter(|r| gen.rows().into_iter().zip(&radii).any(|(g, &rad)| distance(*r, g) <= rad))
        .count();
    Ok(hits as f64 / real.nrows() as f64)
}

/// Fraction of real points whose own k-NN ball (within the real set)
/// contains at least one generated point.
pub fn coverage(real: ArrayView2<'_, f64>, gen: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    check_sets(&real, &gen, k)?;
    let radii = knn_radii(real, k)?;
    let hits = real
        .rows()
        .into_iter()
        .zip(&radii)
        .filter(|(r, &rad)| gen.rows().into_iter().any(|g| distance(*r, g) <= rad))
        .count();
    Ok(hits as f64 / real.nrows() as f64)
}

/// Mean and unbiased covariance of a set.
pub fn moments(x: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::BatchTooSmall { need: 2, got: n });
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    Ok((mean, cov))
}

const COV_EPS: f64 = 1e-6;

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[[i, j]] + a[[j, i]]))
}

/// Symmetric square root; negative eigenvalues are clamped to zero.
fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Regularized copy when the covariance is close to singular.
fn regularize(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(c.clone()).eigenvalues;
    let min = eig.min();
    let scale = eig.amax().max(1.0);
    if min < -1e-9 * scale {
        return Err(Error::NotPsd(min));
    }
    if min < COV_EPS {
        let n = c.nrows();
        return Ok(c + DMatrix::identity(n, n) * COV_EPS);
    }
    Ok(c.clone())
}

/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})`.
pub fn frechet_from_moments(
    mu1: &Array1<f64>,
    s1: &Array2<f64>,
    mu2: &Array1<f64>,
    s2: &Array2<f64>,
) -> Result<f64> {
    let d = mu1.len();
    Error::check_dim(d, mu2.len())?;
    for s in [s1, s2] {
        Error::check_dim(d, s.nrows())?;
        Error::check_dim(d, s.ncols())?;
    }
    let a = regularize(&to_dmatrix(s1))?;
    let b = regularize(&to_dmatrix(s2))?;
    let ra = sqrtm(&a);
    let mut inner = &ra * &b * &ra;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    let dmu: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let fd = dmu + a.trace() + b.trace() - 2.0 * cross;
    if !fd.is_finite() {
        return Err(Error::NonFinite("Frechet distance".into()));
    }
    Ok(fd.max(0.0))
}

pub fn frechet_distance(real: ArrayView2<'_, f64>, gen: ArrayView2<'_, f64>) -> Result<f64> {
    Error::check_dim(real.ncols(), gen.ncols())?;
    let d = real.ncols();
    for n in [real.nrows(), gen.nrows()] {
        if n < d + 1 {
            return Err(Error::BatchTooSmall { need: d + 1, got: n });
        }
    }
    let (m1, s1) = moments(real)?;
    let (m2, s2) = moments(gen)?;
    frechet_from_moments(&m1, &s1, &m2, &s2)
}

/// `count` directions drawn uniformly on the unit sphere, one per row.
pub fn random_directions<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Array2<f64> {
    let raw = Array2::from_shape_simple_fn((count, dim), || rng.sample(StandardNormal));
    normalize_rows(raw)
}

/// Mean over random unit directions of the 1-D 2-Wasserstein distance
/// between the projected sets.
pub fn sliced_wasserstein<R: Rng + ?Sized>(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    projections: usize,
    rng: &mut R,
) -> Result<f64> {
    Error::check_dim(a.ncols(), b.ncols())?;
    let dirs = random_directions(projections, a.ncols(), rng);
    sliced_wasserstein_with(a, b, dirs.view())
}

pub fn sliced_wasserstein_with(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    directions: ArrayView2<'_, f64>,
) -> Result<f64> {
    Error::check_dim(a.nrows(), b.nrows())?;
    Error::check_dim(a.ncols(), b.ncols())?;
    Error::check_dim(a.ncols(), directions.ncols())?;
    if a.nrows() == 0 || directions.nrows() == 0 {
        return Err(Error::InvalidArgument("sliced Wasserstein needs points and directions".into()));
    }
    let mut total = 0.0;
    for dir in directions.rows() {
        let mut pa = a.dot(&dir).to_vec();
        let mut pb = b.dot(&dir).to_vec();
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        let mse = pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / pa.len() as f64;
        total += mse.sqrt();
    }
    Ok(total / directions.nrows() as f64)
}
