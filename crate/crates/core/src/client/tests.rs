use super::*;
use crate::data::gen_synthetic;
use crate::numerics::{argmax, numeric_grad, softmax, sgd_step};
use crate::regulators::{creg_one_step, freg_update};

fn client_data(seed: u64, labeled_per_class: usize, with_unlabeled: bool) -> (ClientData, MlpSpec) {
    let mut rng = stream_rng(seed, Stream::SyntheticTrain, &[]);
    let ds = gen_synthetic(3, 20, 2, 0.4, &mut rng).unwrap();
    let mut li = Vec::new();
    let mut ui = Vec::new();
    for idx in ds.class_indices() {
        li.extend_from_slice(&idx[..labeled_per_class]);
        ui.extend_from_slice(&idx[labeled_per_class..]);
    }
    let labels: Vec<usize> = li.iter().map(|&i| ds.labels()[i]).collect();
    let hidden: Vec<usize> = ui.iter().map(|&i| ds.labels()[i]).collect();
    let unlabeled = with_unlabeled.then(|| ds.features().select_rows(&ui));
    let data = ClientData::new(
        ds.features().select_rows(&li),
        labels,
        3,
        unlabeled,
        if with_unlabeled { hidden } else { Vec::new() },
    )
    .unwrap();
    (data, MlpSpec::classifier(2, &[6], 3).unwrap())
}

fn hp() -> LocalHyperparams {
    LocalHyperparams {
        lr: 0.1,
        lr_creg: 0.1,
        lr_freg: 0.1,
        batch_size: 4,
        unlabeled_batch_size: 5,
        local_iters: 3,
        freg_hidden: 8,
        augment: AugmentSpec::new(0.05, 0.1, 0.1, false).unwrap(),
        ..LocalHyperparams::default()
    }
}

fn setup(seed: u64, with_unlabeled: bool) -> (ClientState, MlpSpec, ParamVector) {
    let (data, spec) = client_data(seed, 2, with_unlabeled);
    let global = spec.init_params(&mut stream_rng(seed, Stream::ModelInit, &[]));
    (ClientState::new(0, data, 8, seed), spec, global)
}

const CTX: RoundContext = RoundContext { seed: 5, round: 2 };

#[test]
fn zero_learning_rate_keeps_global_params() {
    let (mut state, spec, global) = setup(1, true);
    let hp = LocalHyperparams { lr: 0.0, ..hp() };
    for alg in Algorithm::ALL {
        let r = local_round(alg, &mut state, &spec, &global, &hp, CTX).unwrap();
        assert_eq!(r.updated_params, global, "{alg}");
    }
}

#[test]
fn no_unlabeled_data_reduces_to_supervised() {
    let (mut state, spec, global) = setup(2, false);
    let a = feddure_local_round(&mut state, &spec, &global, &hp(), CTX).unwrap();
    let b = supervised_local_round(&mut state, &spec, &global, &hp(), CTX).unwrap();
    assert_eq!(a.updated_params, b.updated_params);
    assert!(a.iteration_logs.iter().all(|l| l.grad_norm_u == 0.0 && l.grad_norm_d == 0.0));
}

#[test]
fn empty_labeled_set_is_an_error() {
    let (data, spec) = client_data(3, 2, true);
    let empty = ClientData::new(
        data.labeled_features().select_rows(&[]),
        Vec::new(),
        3,
        data.unlabeled_features().cloned(),
        Vec::new(),
    )
    .unwrap();
    let mut state = ClientState::new(0, empty, 8, 0);
    let global = spec.zero_params();
    assert!(feddure_local_round(&mut state, &spec, &global, &hp(), CTX).is_err());
}

#[test]
fn one_iteration_matches_term_by_term_recomputation() {
    let (mut state, spec, global) = setup(4, true);
    let hp = LocalHyperparams { local_iters: 1, ..hp() };
    let freg0 = state.freg.clone();
    let r = feddure_local_round(&mut state, &spec, &global, &hp, CTX).unwrap();

    let batch = sample_batch(&state.data, &hp, &mut CTX.rng(0)).unwrap();
    let weak = batch.weak.as_ref().unwrap();
    let strong = batch.strong.as_ref().unwrap();
    let logits = spec.forward(&global, weak).unwrap();
    let pseudo: Vec<usize> = logits.row_iter().map(argmax).collect();
    let up = freg_update(&spec, &freg0, &global, &batch.labeled_x, &batch.labeled_y, strong, &pseudo, &hp.meta()).unwrap();
    let phi1 = creg_one_step(&spec, &global, &up.next, strong, &pseudo, hp.lr_creg, false).unwrap();
    let m = up.next.weights(&softmax(&spec.forward(&global, strong).unwrap())).unwrap();
    let d = mean_loss(&spec, &global, &batch.labeled_x, &batch.labeled_y).unwrap()
        - mean_loss(&spec, &phi1, &batch.labeled_x, &batch.labeled_y).unwrap();

    let ce = |p: &ParamVector, x: &Tensor, y: &[usize], w: &[f64]| -> Result<f64> {
        let per = crate::numerics::cross_entropy(&spec.forward(p, x)?, Targets::Hard(y))?.per_example;
        Ok(per.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / per.len() as f64)
    };
    let ones_l = vec![1.0; batch.labeled_y.len()];
    let ones_u = vec![1.0; pseudo.len()];
    let g_s = numeric_grad(|p| ce(p, &batch.labeled_x, &batch.labeled_y, &ones_l), &global, 1e-6).unwrap();
    let g_u = numeric_grad(|p| ce(p, strong, &pseudo, &m), &global, 1e-6).unwrap();
    let g_d = numeric_grad(|p| ce(p, strong, &pseudo, &ones_u), &global, 1e-6).unwrap().scale(d);
    let expected = sgd_step(&global, &g_s.add(&g_u).unwrap().add(&g_d).unwrap(), hp.lr).unwrap();

    for (a, b) in r.updated_params.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert_eq!(state.freg, up.next);
    assert_eq!(r.iteration_logs[0].d, d);
}

#[derive(Default)]
struct Recorder {
    events: Vec<&'static str>,
    round_start_ok: bool,
    updated: Vec<FReg>,
    creg_used: Vec<FReg>,
    weights_used: Vec<FReg>,
}

impl ScheduleObserver for Recorder {
    fn observe(&mut self, event: ScheduleEvent<'_>) {
        let name = match event {
            ScheduleEvent::RoundStart { theta, phi } => {
                self.round_start_ok = theta == phi;
                "start"
            }
            ScheduleEvent::PseudoLabels(_) => "pseudo",
            ScheduleEvent::ProbeStep { .. } => "probe",
            ScheduleEvent::FRegUpdated { next, .. } => {
                self.updated.push(next.clone());
                "freg"
            }
            ScheduleEvent::CRegUpdated { weighting, .. } => {
                if let Weighting::Regulator(f) = weighting {
                    self.creg_used.push(f.clone());
                }
                "creg"
            }
            ScheduleEvent::InstanceWeights { weighting, .. } => {
                if let Weighting::Regulator(f) = weighting {
                    self.weights_used.push(f.clone());
                }
                "weights"
            }
            ScheduleEvent::Reward(_) => "reward",
            ScheduleEvent::LocalStep { .. } => "step",
        };
        self.events.push(name);
    }
}

#[test]
fn schedule_updates_freg_before_creg() {
    let (mut state, spec, global) = setup(6, true);
    let mut rec = Recorder::default();
    feddure_local_round_observed(&mut state, &spec, &global, &hp(), CTX, &mut rec).unwrap();
    let one = ["pseudo", "probe", "freg", "creg", "weights", "reward", "step"];
    let mut expected = vec!["start"];
    for _ in 0..3 {
        expected.extend_from_slice(&one);
    }
    assert_eq!(rec.events, expected);
    assert!(rec.round_start_ok);
    assert_eq!(rec.updated, rec.creg_used);
    assert_eq!(rec.updated, rec.weights_used);
}

#[test]
fn round_starts_from_global_params() {
    struct Start(Option<(ParamVector, ParamVector)>);
    impl ScheduleObserver for Start {
        fn observe(&mut self, event: ScheduleEvent<'_>) {
            if let ScheduleEvent::RoundStart { theta, phi } = event {
                self.0 = Some((theta.clone(), phi.clone()));
            }
        }
    }
    let (mut state, spec, global) = setup(7, true);
    let mut obs = Start(None);
    feddure_local_round_observed(&mut state, &spec, &global, &hp(), CTX, &mut obs).unwrap();
    let (theta, phi) = obs.0.unwrap();
    assert_eq!(theta, global);
    assert_eq!(phi, global);
}

#[test]
fn local_rounds_are_deterministic() {
    let (state, spec, global) = setup(8, true);
    for alg in Algorithm::ALL {
        let mut a = state.clone();
        let mut b = state.clone();
        let ra = local_round(alg, &mut a, &spec, &global, &hp(), CTX).unwrap();
        let rb = local_round(alg, &mut b, &spec, &global, &hp(), CTX).unwrap();
        assert_eq!(ra.updated_params, rb.updated_params);
        assert_eq!(ra.iteration_logs, rb.iteration_logs);
        assert_eq!(a.freg, b.freg);
    }
}

#[test]
fn pinned_feddure_equals_zero_threshold_fixmatch() {
    let (state, spec, global) = setup(9, true);
    let pinned = LocalHyperparams {
        threshold: 0.0,
        ablation: Ablation {
            fixed_weight: Some(1.0),
            fixed_reward: Some(0.0),
        },
        ..hp()
    };
    let trainer = LocalTrainer { spec: &spec, hp: &pinned };
    let mut rng = CTX.rng(0);
    let mut theta_a = global.clone();
    let mut theta_b = global.clone();
    let mut phi = global.clone();
    let mut opt_a = Optimizer::new(pinned.optimizer, &global);
    let mut opt_b = Optimizer::new(pinned.optimizer, &global);
    for _ in 0..5 {
        let batch = sample_batch(&state.data, &pinned, &mut rng).unwrap();
        let a = trainer.feddure_iteration(&theta_a, &phi, &state.freg, &batch, &mut opt_a, &mut NoObserver).unwrap();
        let (b, _) = trainer.fixmatch_iteration(&theta_b, &batch, &mut opt_b).unwrap();
        assert_eq!(a.theta, b);
        theta_a = a.theta;
        theta_b = b;
        phi = a.phi;
    }
    let mut sa = state.clone();
    let mut sb = state.clone();
    let ra = feddure_local_round(&mut sa, &spec, &global, &pinned, CTX).unwrap();
    let rb = fixmatch_local_round(&mut sb, &spec, &global, &pinned, CTX).unwrap();
    assert_eq!(ra.updated_params, rb.updated_params);
}

#[test]
fn supervised_training_fits_separable_blobs() {
    let mut rng = stream_rng(10, Stream::SyntheticTrain, &[]);
    let ds = gen_synthetic(3, 30, 2, 0.2, &mut rng).unwrap();
    let data = ClientData::new(ds.features().clone(), ds.labels().to_vec(), 3, None, Vec::new()).unwrap();
    let spec = MlpSpec::classifier(2, &[16], 3).unwrap();
    let global = spec.init_params(&mut stream_rng(10, Stream::ModelInit, &[]));
    let mut state = ClientState::new(0, data, 8, 10);
    let hp = LocalHyperparams {
        lr: 0.1,
        batch_size: 10,
        local_iters: 200,
        ..LocalHyperparams::default()
    };
    let r = supervised_local_round(&mut state, &spec, &global, &hp, CTX).unwrap();
    let logits = spec.forward(&r.updated_params, ds.features()).unwrap();
    let correct = logits.row_iter().zip(ds.labels()).filter(|(row, &y)| argmax(row) == y).count();
    assert!(correct as f64 / ds.len() as f64 >= 0.95, "{correct}/{}", ds.len());
}

#[test]
fn repeated_example_loss_decreases() {
    let x = Tensor::from_rows(&[vec![0.5, -1.0]]).unwrap();
    let data = ClientData::new(x.clone(), vec![2], 3, None, Vec::new()).unwrap();
    let spec = MlpSpec::classifier(2, &[6], 3).unwrap();
    let mut theta = spec.init_params(&mut stream_rng(11, Stream::ModelInit, &[]));
    let mut state = ClientState::new(0, data, 8, 11);
    let hp = LocalHyperparams {
        lr: 0.05,
        batch_size: 4,
        ..LocalHyperparams::default()
    };
    let mut prev = mean_loss(&spec, &theta, &x, &[2]).unwrap();
    for round in 0..5 {
        theta = supervised_local_round(&mut state, &spec, &theta, &hp, RoundContext { seed: 0, round })
            .unwrap()
            .updated_params;
        let now = mean_loss(&spec, &theta, &x, &[2]).unwrap();
        assert!(now < prev, "round {round}: {now} ≥ {prev}");
        prev = now;
    }
}

#[test]
fn unreachable_threshold_reduces_fixmatch_to_supervised() {
    let (mut state, spec, _) = setup(12, true);
    let zero = spec.zero_params();
    let hp = LocalHyperparams { threshold: 0.999999, ..hp() };
    let a = fixmatch_local_round(&mut state, &spec, &zero, &hp, CTX).unwrap();
    let b = supervised_local_round(&mut state, &spec, &zero, &hp, CTX).unwrap();
    assert_eq!(a.updated_params, b.updated_params);
    assert!(a.iteration_logs.iter().all(|l| l.mean_weight == 0.0));
}

#[test]
fn threshold_one_over_c_passes_everything() {
    let (mut state, spec, global) = setup(13, true);
    let hp = LocalHyperparams { threshold: 1.0 / 3.0, ..hp() };
    let r = fixmatch_local_round(&mut state, &spec, &global, &hp, CTX).unwrap();
    assert!(r.iteration_logs.iter().all(|l| l.mean_weight == 1.0));
}

#[test]
fn fixmatch_mask_matches_hand_filtering() {
    let (state, spec, _) = setup(14, true);
    // A confident model so that some but not all examples pass 0.95.
    let mut theta = spec.init_params(&mut stream_rng(14, Stream::ModelInit, &[]));
    theta = theta.scale(4.0);
    let hp = LocalHyperparams {
        threshold: 0.95,
        unlabeled_batch_size: 20,
        ..hp()
    };
    let batch = sample_batch(&state.data, &hp, &mut CTX.rng(0)).unwrap();
    let weak = batch.weak.as_ref().unwrap();
    let strong = batch.strong.as_ref().unwrap();
    let probs = softmax(&spec.forward(&theta, weak).unwrap());
    let kept: Vec<usize> = (0..probs.rows())
        .filter(|&i| probs.row(i).iter().cloned().fold(f64::MIN, f64::max) >= 0.95)
        .collect();
    assert!(!kept.is_empty() && kept.len() < probs.rows(), "kept {}", kept.len());
    let labels: Vec<usize> = kept.iter().map(|&i| argmax(probs.row(i))).collect();
    let sub = strong.select_rows(&kept);
    let scale = kept.len() as f64 / probs.rows() as f64;
    let g_u = grad(&spec, &theta, &sub, Targets::Hard(&labels), None).unwrap().scale(scale);
    let g_s = grad(&spec, &theta, &batch.labeled_x, Targets::Hard(&batch.labeled_y), None).unwrap();
    let expected = sgd_step(&theta, &g_s.add(&g_u).unwrap(), hp.lr).unwrap();

    let trainer = LocalTrainer { spec: &spec, hp: &hp };
    let (got, log) = trainer.fixmatch_iteration(&theta, &batch, &mut Optimizer::Sgd).unwrap();
    assert_eq!(log.mean_weight, scale);
    for (a, b) in got.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-13, "{a} vs {b}");
    }
}

#[test]
fn non_finite_gradient_names_the_term() {
    let (mut state, spec, global) = setup(15, true);
    let huge = global.map(|v| v * 1e200);
    let err = feddure_local_round(&mut state, &spec, &huge, &hp(), CTX).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient { term: "g_s" }), "{err}");
}

#[test]
fn epochs_convert_to_iterations() {
    let hp = LocalHyperparams {
        batch_size: 10,
        local_epochs: Some(2),
        ..LocalHyperparams::default()
    };
    assert_eq!(hp.iterations(25), 6);
}

#[test]
fn freg_reset_flag_reinitializes_each_round() {
    let (state, spec, global) = setup(16, true);
    let mut a = state.clone();
    let hp = LocalHyperparams { reset_freg: true, lr_freg: 0.0, ..hp() };
    feddure_local_round(&mut a, &spec, &global, &hp, CTX).unwrap();
    assert_ne!(a.freg, state.freg);
    let mut b = state.clone();
    let keep = LocalHyperparams { reset_freg: false, ..hp.clone() };
    feddure_local_round(&mut b, &spec, &global, &keep, CTX).unwrap();
    assert_eq!(b.freg, state.freg);
}
