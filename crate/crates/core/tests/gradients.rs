//! Central-difference checks of every training loss against its analytic
//! gradient on width-8 networks.

mod common;

use arclab::arcloss::AdversarialKind;
use common::*;

#[test]
fn rectified_flow_loss_gradient() {
    let err = rf_fd_error(1);
    assert!(err < FD_TOLERANCE, "max relative error {err:e}");
}

#[test]
fn relativistic_loss_gradients_for_both_networks() {
    let (g, d) = adversarial_fd_errors(AdversarialKind::Relativistic, 10);
    assert!(g < FD_TOLERANCE, "generator: {g:e}");
    assert!(d < FD_TOLERANCE, "discriminator: {d:e}");
}

#[test]
fn least_squares_loss_gradients_for_both_networks() {
    let (g, d) = adversarial_fd_errors(AdversarialKind::LeastSquares, 20);
    assert!(g < FD_TOLERANCE, "generator: {g:e}");
    assert!(d < FD_TOLERANCE, "discriminator: {d:e}");
}

#[test]
fn contrastive_loss_gradient() {
    let err = contrastive_fd_error(30);
    assert!(err < FD_TOLERANCE, "max relative error {err:e}");
}

#[test]
fn gradients_hold_across_seeds() {
    for seed in [100, 200, 300] {
        assert!(rf_fd_error(seed) < FD_TOLERANCE);
        let (g, d) = adversarial_fd_errors(AdversarialKind::Relativistic, seed);
        assert!(g < FD_TOLERANCE && d < FD_TOLERANCE, "seed {seed}: {g:e} {d:e}");
        assert!(contrastive_fd_error(seed) < FD_TOLERANCE);
    }
}
