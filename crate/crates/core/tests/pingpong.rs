use std::cell::Cell;

use arclab::flowcore::{LogSnrRange, NoiseLevel, Sample};
use arclab::pingpong::{
    make_schedule, pingpong_batch, pingpong_sample, style_transfer, style_transfer_batch, PingPongSchedule,
    ScheduleGrid,
};
use arclab::seeds::rng;
use arclab::toydata::Prompt;
use arclab::Result;
use ndarray::{Array2, ArrayView2};

/// Posterior mean of `x0` for standard-normal data.
fn gaussian_denoiser(x: ArrayView2<'_, f64>, t: f64, _p: &[Prompt]) -> Result<Array2<f64>> {
    let gain = (1.0 - t) / ((1.0 - t).powi(2) + t * t);
    Ok(x.mapv(|v| gain * v))
}

#[test]
fn schedule_examples() {
    let r = LogSnrRange::default();
    assert_eq!(make_schedule(1, &r, ScheduleGrid::LogSnr).unwrap().levels(), &[1.0]);
    let two = make_schedule(2, &r, ScheduleGrid::LogSnr).unwrap();
    let expected = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((two.levels()[1] - expected).abs() < 1e-12);
    let four = make_schedule(4, &r, ScheduleGrid::LogSnr).unwrap();
    assert!((four.levels()[3] - 0.5).abs() < 1e-12);
    let eight = make_schedule(8, &r, ScheduleGrid::LogSnr).unwrap();
    assert!((eight.levels()[7] - 0.377541).abs() < 1e-6);
    for n in 1..40 {
        for g in [ScheduleGrid::LogSnr, ScheduleGrid::UniformT] {
            let s = make_schedule(n, &r, g).unwrap();
            assert_eq!(s.steps(), n);
            assert_eq!(s.levels()[0], 1.0);
            assert!(s.levels().windows(2).all(|w| w[1] < w[0]));
        }
    }
    assert!(make_schedule(0, &r, ScheduleGrid::LogSnr).is_err());
}

#[test]
fn constant_generator_is_a_fixed_point() {
    let target = [1.5, -0.25];
    let calls = Cell::new(0);
    let gen = |x: ArrayView2<'_, f64>, _t: f64, _p: &[Prompt]| {
        calls.set(calls.get() + 1);
        Ok(Array2::from_shape_fn(x.dim(), |(_, j)| target[j]))
    };
    let r = LogSnrRange::default();
    for n in 1..9 {
        calls.set(0);
        let s = make_schedule(n, &r, ScheduleGrid::LogSnr).unwrap();
        let out = pingpong_sample(&gen, &s, Prompt::new(0, 1).unwrap(), 2, &mut rng(1), None).unwrap();
        assert_eq!(out.values(), &target);
        assert_eq!(calls.get(), n);
    }
}

#[test]
fn truncation_keeps_lower_levels() {
    let s = PingPongSchedule::new(vec![1.0, 0.7, 0.3, 0.1]).unwrap();
    assert_eq!(s.truncate(NoiseLevel::new(0.5).unwrap()).unwrap().levels(), &[0.3, 0.1]);
    assert_eq!(s.truncate(NoiseLevel::NOISE).unwrap(), s);
    assert!(s.truncate(NoiseLevel::new(0.05).unwrap()).is_err());
    assert!(PingPongSchedule::new(vec![1.0, 1.0]).is_err());
    assert!(PingPongSchedule::new(vec![1.2]).is_err());
    assert!(PingPongSchedule::new(vec![]).is_err());
}

#[test]
fn batch_items_do_not_depend_on_batch_composition() {
    let s = make_schedule(8, &LogSnrRange::default(), ScheduleGrid::LogSnr).unwrap();
    let prompts = vec![Prompt::new(0, 2).unwrap(); 6];
    let full = pingpong_batch(&gaussian_denoiser, &s, &prompts, 2, 42, None).unwrap();
    let again = pingpong_batch(&gaussian_denoiser, &s, &prompts, 2, 42, None).unwrap();
    assert_eq!(full, again);
    let head = pingpong_batch(&gaussian_denoiser, &s, &prompts[..3], 2, 42, None).unwrap();
    assert_eq!(head, full.slice(ndarray::s![..3, ..]));
    let other = pingpong_batch(&gaussian_denoiser, &s, &prompts, 2, 43, None).unwrap();
    assert_ne!(full, other);
}

#[test]
fn style_transfer_stays_closer_to_the_reference_at_lower_levels() {
    let s = make_schedule(8, &LogSnrRange::default(), ScheduleGrid::LogSnr).unwrap();
    let n = 2000;
    let prompts = vec![Prompt::new(0, 1).unwrap(); n];
    let reference = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let mean_dist = |tau: f64| {
        let out =
            style_transfer_batch(&gaussian_denoiser, &s, &prompts, reference.view(), NoiseLevel::new(tau).unwrap(), 5)
                .unwrap();
        (&out - &reference).mapv(|d| d * d).sum() / n as f64
    };
    let d = [mean_dist(1.0), mean_dist(0.7), mean_dist(0.4)];
    assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
}

#[test]
fn single_item_style_transfer_is_reproducible() {
    let s = make_schedule(4, &LogSnrRange::default(), ScheduleGrid::LogSnr).unwrap();
    let x = Sample::new(vec![0.5, -0.5]).unwrap();
    let c = Prompt::new(0, 1).unwrap();
    let tau = NoiseLevel::new(0.6).unwrap();
    let a = style_transfer(&gaussian_denoiser, &s, c, &x, tau, &mut rng(3)).unwrap();
    let b = style_transfer(&gaussian_denoiser, &s, c, &x, tau, &mut rng(3)).unwrap();
    assert_eq!(a, b);
    assert!(style_transfer(&gaussian_denoiser, &s, c, &x, NoiseLevel::new(0.1).unwrap(), &mut rng(3)).is_err());
}
