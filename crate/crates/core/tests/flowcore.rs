use arclab::flowcore::{
    euler_grid, euler_sample, logsnr_to_t, noise, sample_pdisc, sample_pgen, shift_t, t_to_logsnr, velocity_target,
    EulerGrid, LogSnrRange, LogitNormalSpec, NoiseLevel, Sample,
};
use arclab::toydata::Prompt;
use arclab::{Error, Result};
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn s(v: &[f64]) -> Sample {
    Sample::new(v.to_vec()).unwrap()
}

fn row(x: &Sample) -> Array2<f64> {
    Array2::from_shape_vec((1, x.dim()), x.values().to_vec()).unwrap()
}

#[test]
fn noise_endpoints_and_midpoint() {
    let (x0, eps) = (s(&[2.0, 0.0]), s(&[0.0, 2.0]));
    assert_eq!(noise(&x0, &eps, NoiseLevel::DATA).unwrap(), x0);
    assert_eq!(noise(&x0, &eps, NoiseLevel::NOISE).unwrap(), eps);
    let mid = noise(&x0, &eps, NoiseLevel::new(0.5).unwrap()).unwrap();
    assert_eq!(mid.values(), &[1.0, 1.0]);
}

#[test]
fn noise_rejects_dimension_mismatch() {
    let err = noise(&s(&[1.0]), &s(&[1.0, 2.0]), NoiseLevel::DATA).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }));
    assert!(velocity_target(&s(&[1.0]), &s(&[1.0, 2.0])).is_err());
}

#[test]
fn noise_level_rejects_out_of_range() {
    assert!(NoiseLevel::new(-0.1).is_err());
    assert!(NoiseLevel::new(1.1).is_err());
    assert!(NoiseLevel::new(f64::NAN).is_err());
}

#[test]
fn velocity_target_examples() {
    let v = velocity_target(&s(&[2.0, 0.0]), &s(&[0.0, 2.0])).unwrap();
    assert_eq!(v.values(), &[-2.0, 2.0]);
    let z = velocity_target(&s(&[3.0, -1.0]), &s(&[3.0, -1.0])).unwrap();
    assert_eq!(z.values(), &[0.0, 0.0]);
}

#[test]
fn interpolant_plus_remaining_velocity_reaches_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let x0 = Sample::standard_normal(3, &mut rng);
        let eps = Sample::standard_normal(3, &mut rng);
        let t = NoiseLevel::new(rng.gen()).unwrap();
        let xt = noise(&x0, &eps, t).unwrap();
        let v = velocity_target(&x0, &eps).unwrap();
        for k in 0..3 {
            let back = xt.values()[k] + (1.0 - t.get()) * v.values()[k];
            assert!((back - eps.values()[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn logsnr_examples() {
    assert_eq!(logsnr_to_t(0.0).get(), 0.5);
    assert!((logsnr_to_t(-6.0).get() - 0.952574).abs() < 1e-6);
    assert!((logsnr_to_t(2.0).get() - 0.268941).abs() < 1e-6);
    assert!(t_to_logsnr(NoiseLevel::DATA).is_err());
    assert!(t_to_logsnr(NoiseLevel::NOISE).is_err());
}

#[test]
fn logsnr_closed_forms_match_bisection() {
    for lam in [-6.0, 2.0] {
        let (mut lo, mut hi) = (1e-12, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // decreasing in t
            if t_to_logsnr(NoiseLevel::new(mid).unwrap()).unwrap() > lam {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((0.5 * (lo + hi) - logsnr_to_t(lam).get()).abs() < 1e-12);
    }
}

#[test]
fn logsnr_round_trip() {
    for i in 0..=4000 {
        let lam = -20.0 + 40.0 * i as f64 / 4000.0;
        let back = t_to_logsnr(logsnr_to_t(lam)).unwrap();
        assert!((back - lam).abs() < 1e-9, "lam={lam} back={back}");
    }
}

#[test]
fn pgen_bounds_and_point_mass() {
    let range = LogSnrRange::default();
    let (lo, hi) = range.t_bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..10_000 {
        let t = sample_pgen(&range, &mut rng).get();
        assert!(t > 0.268941 && t < 0.952575);
        assert!(t >= lo && t <= hi);
    }
    let point = LogSnrRange::new(0.0, 0.0).unwrap();
    assert_eq!(sample_pgen(&point, &mut rng).get(), 0.5);
    assert!(LogSnrRange::new(1.0, 0.0).is_err());
}

#[test]
fn pdisc_shift_examples() {
    assert_eq!(shift_t(0.5, 1.0), 0.5);
    assert!((shift_t(0.5, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    let spec = LogitNormalSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 100_000;
    let mut mean = 0.0;
    for _ in 0..n {
        let t = sample_pdisc(&spec, &mut rng).get();
        assert!(t > 0.0 && t < 1.0);
        mean += t / n as f64;
    }
    assert!(mean < 0.5, "mean {mean}");
    assert!(LogitNormalSpec::new(0.0, 0.0, 1.0).is_err());
    assert!(LogitNormalSpec::new(0.0, 1.0, -1.0).is_err());
}

fn linear_field(v: Array2<f64>) -> impl Fn(ArrayView2<'_, f64>, f64, &[Prompt]) -> Result<Array2<f64>> {
    move |_x, _t, _p| Ok(v.clone())
}

#[test]
fn euler_is_exact_on_linear_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = Sample::standard_normal(2, &mut rng);
    let eps = Sample::standard_normal(2, &mut rng);
    let v = velocity_target(&x0, &eps).unwrap();
    let field = linear_field(row(&v));
    let prompts = [Prompt::new(0, 4).unwrap()];
    for (steps, tol) in [(1, 1e-6), (50, 1e-5)] {
        for grid in [EulerGrid::UniformT, EulerGrid::UniformLogSnr] {
            let out = euler_sample(&field, row(&eps).view(), &prompts, steps, NoiseLevel::NOISE, grid).unwrap();
            for k in 0..2 {
                assert!((out[[0, k]] - x0.values()[k]).abs() < tol);
            }
        }
    }
}

#[test]
fn euler_zero_field_and_degenerate_start() {
    let field = linear_field(Array2::zeros((1, 2)));
    let x = s(&[0.3, -0.7]);
    let prompts = [Prompt::new(1, 4).unwrap()];
    let out = euler_sample(&field, row(&x).view(), &prompts, 1, NoiseLevel::NOISE, EulerGrid::UniformT).unwrap();
    assert_eq!(out.row(0).to_vec(), x.values());
    let ones = linear_field(Array2::ones((1, 2)));
    let out = euler_sample(&ones, row(&x).view(), &prompts, 4, NoiseLevel::DATA, EulerGrid::UniformT).unwrap();
    assert_eq!(out.row(0).to_vec(), x.values());
    assert!(euler_sample(&field, row(&x).view(), &prompts, 0, NoiseLevel::NOISE, EulerGrid::UniformT).is_err());
}

#[test]
fn euler_aborts_on_non_finite_velocity() {
    let field = linear_field(Array2::from_elem((1, 2), f64::NAN));
    let prompts = [Prompt::new(0, 4).unwrap()];
    let err = euler_sample(&field, Array2::zeros((1, 2)).view(), &prompts, 2, NoiseLevel::NOISE, EulerGrid::UniformT)
        .unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
}

#[test]
fn euler_grids_are_decreasing() {
    for grid in [EulerGrid::UniformT, EulerGrid::UniformLogSnr] {
        for steps in [1, 2, 8, 50] {
            let g = euler_grid(1.0, steps, grid);
            assert_eq!(g.len(), steps + 1);
            assert_eq!(g[0], 1.0);
            assert_eq!(*g.last().unwrap(), 0.0);
            assert!(g.windows(2).all(|w| w[0] > w[1]), "{grid:?} {g:?}");
        }
    }
}
