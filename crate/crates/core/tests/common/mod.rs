//! Helpers shared by the integration tests: jittered small networks,
//! finite-difference drivers, brute-force metric references and KS
//! statistics.
#![allow(dead_code)]

use arclab::arcloss::{
    adversarial_with, compute_lc_with, rf_loss_with, AdversarialDraw, AdversarialKind, ContrastiveDraw, LossConfig,
    PermutationKind, RfDraw, Wanted,
};
use arclab::nets::{init_from_pretrained, Discriminator, NetParams, Topology, VelocityNet};
use arclab::seeds::rng;
use arclab::toydata::{default_spec, sample_batch, LabeledBatch};
use ndarray::{ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_CHECKED: usize = 200;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn small_topology() -> Topology {
    Topology {
        dim: 2,
        classes: 4,
        embed_dim: 4,
        time_freqs: 3,
        width: 8,
        hidden_layers: 3,
    }
}

/// Relative error with a floor of 1e-6 on the scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Generator and discriminator with every discriminator parameter
/// (including the zero read-out) jittered, so no gradient is trivially
/// zero.
pub fn jittered_nets(seed: u64) -> (VelocityNet, Discriminator, LabeledBatch) {
    let mut r = rng(seed);
    let pre = VelocityNet::new(small_topology(), &mut r).unwrap();
    let (gen, mut disc) = init_from_pretrained(&pre, 8, &mut r).unwrap();
    for v in disc.params_mut().data_mut() {
        *v += r.gen_range(-0.3..0.3);
    }
    let batch = sample_batch(&default_spec(), 6, &mut r).unwrap();
    (gen, disc, batch)
}

/// Largest relative error of central differences over `FD_CHECKED`
/// random parameter indices.
pub fn max_fd_error(params: &NetParams, analytic: &[f64], seed: u64, loss: impl Fn(&NetParams) -> f64) -> f64 {
    assert!(params.len() >= FD_CHECKED, "need at least {FD_CHECKED} parameters, have {}", params.len());
    let mut r = rng(seed);
    let mut p = params.clone();
    let mut worst: f64 = 0.0;
    for i in sample(&mut r, params.len(), FD_CHECKED) {
        let orig = p.data()[i];
        p.data_mut()[i] = orig + FD_STEP;
        let up = loss(&p);
        p.data_mut()[i] = orig - FD_STEP;
        let down = loss(&p);
        p.data_mut()[i] = orig;
        worst = worst.max(rel_err((up - down) / (2.0 * FD_STEP), analytic[i]));
    }
    worst
}

fn gen_with(net: &VelocityNet, p: &NetParams) -> VelocityNet {
    VelocityNet::from_params(*net.topology(), p.clone()).unwrap()
}

fn disc_with(disc: &Discriminator, p: &NetParams) -> Discriminator {
    Discriminator::from_params(*disc.topology(), p.clone()).unwrap()
}

const NONE: Wanted = Wanted { gen: false, disc: false };

pub fn rf_fd_error(seed: u64) -> f64 {
    let (gen, _, batch) = jittered_nets(seed);
    let draw = RfDraw::sample(batch.len(), 2, &Default::default(), &mut rng(seed + 1));
    let (_, g) = rf_loss_with(&gen, &batch, &draw).unwrap();
    max_fd_error(gen.params(), g.data(), seed + 2, |p| {
        rf_loss_with(&gen_with(&gen, p), &batch, &draw).unwrap().0
    })
}

/// `(generator error, discriminator error)`.
pub fn adversarial_fd_errors(kind: AdversarialKind, seed: u64) -> (f64, f64) {
    let (gen, disc, batch) = jittered_nets(seed);
    let draw = AdversarialDraw::sample(batch.len(), 2, &LossConfig::default(), &mut rng(seed + 1));
    let out = adversarial_with(&gen, &disc, &batch, &draw, kind, Wanted::BOTH).unwrap();
    let g = max_fd_error(gen.params(), out.gen_grads.unwrap().data(), seed + 2, |p| {
        adversarial_with(&gen_with(&gen, p), &disc, &batch, &draw, kind, NONE)
            .unwrap()
            .gen_loss
    });
    let d = max_fd_error(disc.params(), out.disc_grads.unwrap().data(), seed + 3, |p| {
        adversarial_with(&gen, &disc_with(&disc, p), &batch, &draw, kind, NONE)
            .unwrap()
            .disc_loss
    });
    (g, d)
}

pub fn contrastive_fd_error(seed: u64) -> f64 {
    let (_, disc, batch) = jittered_nets(seed);
    let draw = ContrastiveDraw::sample(
        batch.len(),
        2,
        &Default::default(),
        PermutationKind::Derangement,
        &mut rng(seed + 1),
    )
    .unwrap();
    let out = compute_lc_with(&disc, &batch, &draw, true).unwrap();
    max_fd_error(disc.params(), out.grads.unwrap().data(), seed + 2, |p| {
        compute_lc_with(&disc_with(&disc, p), &batch, &draw, false).unwrap().loss
    })
}

// ---------------------------------------------------------------------------
// Brute-force metric references

pub fn euclid(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// k-th smallest distance to the other points, by full sort.
pub fn brute_radius(set: ArrayView2<'_, f64>, i: usize, k: usize) -> f64 {
    let mut d: Vec<f64> = (0..set.nrows())
        .filter(|&j| j != i)
        .map(|j| euclid(set.row(i), set.row(j)))
        .collect();
    d.sort_by(f64::total_cmp);
    d[k - 1]
}

pub fn brute_recall(real: ArrayView2<'_, f64>, gen: ArrayView2<'_, f64>, k: usize) -> f64 {
    let radii: Vec<f64> = (0..gen.nrows()).map(|j| brute_radius(gen, j, k)).collect();
    let mut hits = 0;
    for r in real.rows() {
        if (0..gen.nrows()).any(|j| euclid(r, gen.row(j)) <= radii[j]) {
            hits += 1;
        }
    }
    hits as f64 / real.nrows() as f64
}

pub fn brute_coverage(real: ArrayView2<'_, f64>, gen: ArrayView2<'_, f64>, k: usize) -> f64 {
    let mut hits = 0;
    for i in 0..real.nrows() {
        let rad = brute_radius(real, i, k);
        if gen.rows().into_iter().any(|g| euclid(real.row(i), g) <= rad) {
            hits += 1;
        }
    }
    hits as f64 / real.nrows() as f64
}

/// Mean over ordered pairs `i != j` of `1 - cos`, averaged over groups.
pub fn brute_ccds(groups: &[ndarray::Array2<f64>]) -> f64 {
    let mut total = 0.0;
    for g in groups {
        let n = g.nrows();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (a, b) = (g.row(i), g.row(j));
                    let cos = a.dot(&b) / (a.dot(&a) * b.dot(&b)).sqrt();
                    sum += 1.0 - cos;
                }
            }
        }
        total += sum / (n * (n - 1)) as f64;
    }
    total / groups.len() as f64
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov statistics

/// One-sample statistic against a continuous CDF.
pub fn ks_one_sample(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

pub fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
