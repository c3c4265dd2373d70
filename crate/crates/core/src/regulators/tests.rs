use super::*;
use crate::numerics::{check_gradient, sgd_step};
use crate::rng::{stream_rng, Stream};
use rand::Rng;
use rand_distr::StandardNormal;

struct Instance {
    spec: MlpSpec,
    phi: ParamVector,
    freg: FReg,
    x: Tensor,
    y: Vec<usize>,
    u: Tensor,
    pseudo: Vec<usize>,
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

fn instance(seed: u64, dim: usize, hidden: usize, classes: usize, freg_hidden: usize) -> Instance {
    let mut rng = stream_rng(seed, Stream::ModelInit, &[99]);
    let spec = MlpSpec::classifier(dim, &[hidden], classes).unwrap();
    let phi = spec.init_params(&mut rng);
    let freg = FReg::init(classes, freg_hidden, &mut rng);
    let x = gaussian(6, dim, &mut rng);
    let y = (0..6).map(|_| rng.random_range(0..classes)).collect();
    let u = gaussian(8, dim, &mut rng);
    let pseudo = (0..8).map(|_| rng.random_range(0..classes)).collect();
    Instance {
        spec,
        phi,
        freg,
        x,
        y,
        u,
        pseudo,
    }
}

fn cosine(a: &ParamVector, b: &ParamVector) -> f64 {
    a.dot(b).unwrap() / (a.norm() * b.norm())
}

#[test]
fn pseudo_labels_follow_dominant_logits() {
    let spec = MlpSpec::new(vec![3, 3]).unwrap();
    let mut theta = spec.zero_params();
    for i in 0..3 {
        *theta.coord_mut(0, i * 3 + i) = 1.0;
    }
    let u = Tensor::from_rows(&[vec![5.0, 0.0, 0.0], vec![0.0, 0.0, 9.0], vec![0.0, 3.0, 1.0]]).unwrap();
    let mut rng = stream_rng(0, Stream::LocalTraining, &[]);
    let y = pseudo_label(&spec, &theta, &u, &AugmentSpec::identity(), &mut rng).unwrap();
    assert_eq!(y, vec![0, 2, 1]);
}

#[test]
fn zero_model_pseudo_labels_tie_to_class_zero() {
    let spec = MlpSpec::classifier(2, &[4], 3).unwrap();
    let u = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.3, 0.4]]).unwrap();
    let mut rng = stream_rng(0, Stream::LocalTraining, &[]);
    let y = pseudo_label(&spec, &spec.zero_params(), &u, &AugmentSpec::identity(), &mut rng).unwrap();
    assert_eq!(y, vec![0, 0]);
}

#[test]
fn pseudo_labels_match_forward_argmax() {
    let inst = instance(3, 4, 5, 3, 4);
    let aug = AugmentSpec::new(0.1, 0.2, 0.1, false).unwrap();
    let y = pseudo_label(&inst.spec, &inst.phi, &inst.u, &aug, &mut stream_rng(1, Stream::LocalTraining, &[])).unwrap();
    let weak = augment(&inst.u, &aug, Strength::Weak, &mut stream_rng(1, Stream::LocalTraining, &[]));
    let logits = inst.spec.forward(&inst.phi, &weak).unwrap();
    let expected: Vec<usize> = logits
        .row_iter()
        .map(|r| {
            let mut best = 0;
            for c in 1..r.len() {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    assert_eq!(y, expected);
}

#[test]
fn creg_zero_step_is_identity() {
    let inst = instance(1, 3, 4, 3, 4);
    let phi = creg_one_step(&inst.spec, &inst.phi, &inst.freg, &inst.u, &inst.pseudo, 0.0, false).unwrap();
    assert_eq!(phi, inst.phi);
}

#[test]
fn creg_empty_batch_is_an_error() {
    let inst = instance(1, 3, 4, 3, 4);
    assert!(matches!(
        creg_one_step(&inst.spec, &inst.phi, &inst.freg, &inst.u, &[], 0.1, false),
        Err(Error::EmptyBatch(_))
    ));
}

#[test]
fn constant_regulator_scales_the_plain_step() {
    let inst = instance(2, 3, 4, 3, 4);
    let kappa = 0.3;
    let freg = FReg::constant(3, 4, kappa).unwrap();
    let eta = 0.2;
    let phi = creg_one_step(&inst.spec, &inst.phi, &freg, &inst.u, &inst.pseudo, eta, false).unwrap();
    let g = grad(&inst.spec, &inst.phi, &inst.u, Targets::Hard(&inst.pseudo), None).unwrap();
    let expected = inst.phi.axpy(-eta * kappa, &g).unwrap();
    for (a, b) in phi.iter().zip(expected.iter()) {
        assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn unit_weighting_is_the_unweighted_step_bit_exactly() {
    let inst = instance(5, 3, 4, 3, 4);
    let phi = creg_one_step(&inst.spec, &inst.phi, Weighting::Constant(1.0), &inst.u, &inst.pseudo, 0.3, false).unwrap();
    let g = grad(&inst.spec, &inst.phi, &inst.u, Targets::Hard(&inst.pseudo), None).unwrap();
    assert_eq!(phi, sgd_step(&inst.phi, &g, 0.3).unwrap());
}

#[test]
fn product_rule_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let inst = instance(seed, 3, 5, 4, 6);
        let objective = WeightedPseudoObjective {
            spec: &inst.spec,
            weighting: Weighting::Regulator(&inst.freg),
            strong: &inst.u,
            pseudo: &inst.pseudo,
            stop_grad_through_weight: false,
        };
        let report = check_gradient(|p| objective.value(p), objective.grad_phi(&inst.phi).unwrap(), &inst.phi, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-5, "seed {seed}: {}", report.max_rel_error);
    }
}

#[test]
fn weight_gradient_matches_finite_differences() {
    let inst = instance(7, 3, 5, 4, 6);
    let objective = |w: &ParamVector| {
        let f = inst.freg.with_params(w.clone())?;
        WeightedPseudoObjective {
            spec: &inst.spec,
            weighting: Weighting::Regulator(&f),
            strong: &inst.u,
            pseudo: &inst.pseudo,
            stop_grad_through_weight: false,
        }
        .value(&inst.phi)
    };
    let analytic = WeightedPseudoObjective {
        spec: &inst.spec,
        weighting: Weighting::Regulator(&inst.freg),
        strong: &inst.u,
        pseudo: &inst.pseudo,
        stop_grad_through_weight: false,
    }
    .grad_w(&inst.phi)
    .unwrap();
    let report = check_gradient(objective, analytic, inst.freg.params(), 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
}

#[test]
fn stop_grad_drops_the_weight_path() {
    let inst = instance(8, 3, 4, 3, 4);
    let objective = WeightedPseudoObjective {
        spec: &inst.spec,
        weighting: Weighting::Regulator(&inst.freg),
        strong: &inst.u,
        pseudo: &inst.pseudo,
        stop_grad_through_weight: true,
    };
    let h = inst.freg.weights(&softmax(&inst.spec.forward(&inst.phi, &inst.u).unwrap())).unwrap();
    let g = grad(&inst.spec, &inst.phi, &inst.u, Targets::Hard(&inst.pseudo), Some(&h)).unwrap();
    assert_eq!(objective.grad_phi(&inst.phi).unwrap(), g);
}

#[test]
fn unchanged_model_has_zero_reward() {
    let inst = instance(4, 3, 4, 3, 4);
    let r = entropy_difference(&inst.spec, &inst.phi, &inst.phi, &inst.x, &inst.y).unwrap();
    assert_eq!(r.d, 0.0);
}

#[test]
fn descent_step_has_positive_reward() {
    let inst = instance(4, 3, 4, 3, 4);
    let g = grad(&inst.spec, &inst.phi, &inst.x, Targets::Hard(&inst.y), None).unwrap();
    let next = sgd_step(&inst.phi, &g, 1e-3).unwrap();
    let r = entropy_difference(&inst.spec, &inst.phi, &next, &inst.x, &inst.y).unwrap();
    assert!(r.d > 0.0);
}

#[test]
fn reward_is_difference_of_recomputed_losses() {
    let inst = instance(6, 3, 4, 3, 4);
    let next = creg_one_step(&inst.spec, &inst.phi, &inst.freg, &inst.u, &inst.pseudo, 0.5, false).unwrap();
    let r = entropy_difference(&inst.spec, &inst.phi, &next, &inst.x, &inst.y).unwrap();
    let before = cross_entropy(&inst.spec.forward(&inst.phi, &inst.x).unwrap(), Targets::Hard(&inst.y)).unwrap().mean;
    let after = cross_entropy(&inst.spec.forward(&next, &inst.x).unwrap(), Targets::Hard(&inst.y)).unwrap().mean;
    assert_eq!(r.loss_before, before);
    assert_eq!(r.loss_after, after);
    assert_eq!(r.d, before - after);
    assert!(entropy_difference(&inst.spec, &inst.phi, &next, &inst.x.select_rows(&[]), &[]).is_err());
}

fn cfg(mode: MetaGradMode, eta_s: f64, eta_w: f64) -> MetaGradConfig {
    MetaGradConfig {
        mode,
        eta_s,
        eta_w,
        ..MetaGradConfig::default()
    }
}

#[test]
fn frozen_probe_leaves_regulator_unchanged() {
    let inst = instance(9, 3, 4, 3, 4);
    for mode in [MetaGradMode::ExactNumeric, MetaGradMode::DartsFd] {
        let up = freg_update(&inst.spec, &inst.freg, &inst.phi, &inst.x, &inst.y, &inst.u, &inst.pseudo, &cfg(mode, 0.0, 0.5)).unwrap();
        assert_eq!(up.next, inst.freg, "{mode:?}");
    }
}

#[test]
fn zero_meta_rate_leaves_regulator_unchanged() {
    let inst = instance(9, 3, 4, 3, 4);
    for mode in [MetaGradMode::ExactNumeric, MetaGradMode::DartsFd] {
        let up = freg_update(&inst.spec, &inst.freg, &inst.phi, &inst.x, &inst.y, &inst.u, &inst.pseudo, &cfg(mode, 0.1, 0.0)).unwrap();
        assert_eq!(up.next, inst.freg, "{mode:?}");
    }
}

#[test]
fn darts_direction_matches_exact_oracle() {
    for seed in 0..10 {
        let inst = instance(seed, 3, 6, 3, 8);
        let exact = freg_meta_gradient(&inst.spec, &inst.freg, &inst.phi, &inst.x, &inst.y, &inst.u, &inst.pseudo, &cfg(MetaGradMode::ExactNumeric, 0.05, 0.1)).unwrap().0;
        let darts = freg_meta_gradient(&inst.spec, &inst.freg, &inst.phi, &inst.x, &inst.y, &inst.u, &inst.pseudo, &cfg(MetaGradMode::DartsFd, 0.05, 0.1)).unwrap().0;
        let cos = cosine(&exact, &darts);
        let ratio = darts.norm() / exact.norm();
        assert!(cos >= 0.99, "seed {seed}: cosine {cos}");
        assert!((ratio - 1.0).abs() <= 0.1, "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn zero_labeled_gradient_skips_update() {
    // Zero model: logits are all zero, so the labeled gradient vanishes only
    // if every class appears equally often; use one example per class.
    let spec = MlpSpec::new(vec![2, 2]).unwrap();
    let phi = spec.zero_params();
    let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let u = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
    let freg = FReg::zeros(2, 3);
    let up = freg_update(&spec, &freg, &phi, &x, &[0, 1], &u, &[0], &cfg(MetaGradMode::DartsFd, 0.0, 0.1)).unwrap();
    assert!(up.skipped);
    assert_eq!(up.next, freg);
}

#[test]
fn instance_weights_compose_forward_passes() {
    let inst = instance(11, 3, 4, 3, 4);
    let m = instance_weights(&inst.spec, &inst.phi, &inst.freg, &inst.u).unwrap();
    let probs = softmax(&inst.spec.forward(&inst.phi, &inst.u).unwrap());
    assert_eq!(m, inst.freg.weights(&probs).unwrap());
    assert!(m.iter().all(|&v| v > 0.0 && v < 1.0));
    let half = instance_weights(&inst.spec, &inst.phi, &FReg::zeros(3, 4), &inst.u).unwrap();
    assert!(half.iter().all(|&v| v == 0.5));
}
