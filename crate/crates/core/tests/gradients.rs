mod common;

use std::time::Instant;

#[test]
fn every_primitive_matches_central_differences() {
    for (name, err) in common::primitive_gradient_errors() {
        assert!(err < 1e-4, "{name}: relative error {err:e}");
    }
}

#[test]
fn batch_objective_matches_central_differences() {
    let start = Instant::now();
    let err = common::full_loss_gradient_error();
    assert!(err < 1e-4, "relative error {err:e}");
    assert!(start.elapsed().as_secs() < 30);
}
