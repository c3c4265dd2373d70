mod common;

use common::{gradient_errors, instance, meta_fidelity};

const TOLERANCE: f64 = 1e-6;

#[test]
fn analytic_gradients_match_central_differences_over_twenty_seeds() {
    let mut worst = [0.0f64; 4];
    for seed in 0..20 {
        let inst = instance(seed, 3, 5, 4, 6);
        for (w, e) in worst.iter_mut().zip(gradient_errors(&inst)) {
            *w = w.max(e);
        }
    }
    let names = ["supervised", "weighted unlabeled", "C-reg in phi", "C-reg in w"];
    for (name, err) in names.iter().zip(worst) {
        assert!(err < TOLERANCE, "{name}: max relative error {err:e}");
    }
}

#[test]
fn gradients_hold_for_deeper_networks() {
    use feddure::numerics::{check_gradient, grad, mean_loss, MlpSpec, Targets};
    for seed in 0..5 {
        let inst = instance(seed, 3, 5, 4, 6);
        let spec = MlpSpec::classifier(3, &[7, 5], 4).unwrap();
        let theta = spec.init_params(&mut common::rng(seed + 100));
        let report = check_gradient(
            |p| mean_loss(&spec, p, &inst.x, &inst.y),
            grad(&spec, &theta, &inst.x, Targets::Hard(&inst.y), None).unwrap(),
            &theta,
            common::FD_STEP,
        )
        .unwrap();
        assert!(report.max_rel_error < TOLERANCE, "seed {seed}: {:e}", report.max_rel_error);
    }
}

#[test]
fn darts_meta_gradient_tracks_exact_oracle() {
    for seed in 0..10 {
        let inst = instance(seed, 3, 6, 3, 8);
        assert!(inst.freg.params().len() <= 200);
        let (cos, ratio) = meta_fidelity(&inst);
        assert!(cos >= 0.99, "seed {seed}: cosine {cos}");
        assert!((ratio - 1.0).abs() <= 0.1, "seed {seed}: norm ratio {ratio}");
    }
}
