use arclab::seeds::{derive, derive_index, rng};
use rand::Rng;

#[test]
fn derivation_is_stable_and_separates_labels() {
    assert_eq!(derive(7, "pretrain"), derive(7, "pretrain"));
    assert_ne!(derive(7, "pretrain"), derive(7, "posttrain"));
    assert_ne!(derive(7, "pretrain"), derive(8, "pretrain"));
    assert_ne!(derive_index(7, 0), derive_index(7, 1));
}

#[test]
fn streams_replay() {
    let (mut a, mut b) = (rng(5), rng(5));
    for _ in 0..8 {
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }
}
