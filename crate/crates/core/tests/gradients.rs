mod common;

use common::oracles::{kl_gradient_error, model_gradient_errors, primitive_gradient_errors};
use mivat::model::Preset;

const TOL: f64 = 1e-4;

#[test]
fn every_primitive_matches_central_differences() {
    let errors = primitive_gradient_errors(3);
    assert!(errors.len() >= 50);
    for (what, err) in errors {
        assert!(err < TOL, "{what}: relative error {err:e}");
    }
}

#[test]
fn kl_divergence_through_softmax() {
    for seed in 0..5 {
        let err = kl_gradient_error(seed);
        assert!(err < TOL, "kl: {err:e}");
    }
}

#[test]
fn full_model_loss_matches_central_differences() {
    let mut runs: Vec<(Preset, u64)> = (0..4).flat_map(|s| [(Preset::MlpToy, s), (Preset::TremorCnn, s)]).collect();
    runs.push((Preset::Lenet5Mnist, 0));
    for (preset, seed) in runs {
        for (what, err) in model_gradient_errors(preset, seed) {
            assert!(err < TOL, "{what} (seed {seed}): relative error {err:e}");
        }
    }
}
