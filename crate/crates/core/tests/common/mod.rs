//! Shared fixtures and checks for the integration and acceptance targets.
#![allow(dead_code)]

use feddure::numerics::{check_gradient, grad, mean_loss, MlpSpec, ParamVector, Targets, Tensor};
use feddure::regulators::{
    creg_one_step, entropy_difference, freg_meta_gradient, FReg, MetaGradConfig, MetaGradMode,
    Weighting, WeightedPseudoObjective,
};
use feddure::rng::{stream_rng, SimRng, Stream};
use rand::Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

pub fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let v = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::matrix(rows, cols, v).unwrap()
}

pub struct Instance {
    pub spec: MlpSpec,
    pub phi: ParamVector,
    pub freg: FReg,
    pub x: Tensor,
    pub y: Vec<usize>,
    pub u: Tensor,
    pub pseudo: Vec<usize>,
    pub m: Vec<f64>,
}

pub fn rng(seed: u64) -> SimRng {
    stream_rng(seed, Stream::ModelInit, &[0xACCE])
}

pub fn instance(seed: u64, dim: usize, hidden: usize, classes: usize, freg_hidden: usize) -> Instance {
    let mut rng = rng(seed);
    let spec = MlpSpec::classifier(dim, &[hidden], classes).unwrap();
    let phi = spec.init_params(&mut rng);
    let freg = FReg::init(classes, freg_hidden, &mut rng);
    let x = gaussian(6, dim, &mut rng);
    let y = (0..6).map(|_| rng.random_range(0..classes)).collect();
    let u = gaussian(8, dim, &mut rng);
    let pseudo = (0..8).map(|_| rng.random_range(0..classes)).collect();
    let m = (0..8).map(|_| rng.random_range(0.05..1.0)).collect();
    Instance {
        spec,
        phi,
        freg,
        x,
        y,
        u,
        pseudo,
        m,
    }
}

pub fn cosine(a: &ParamVector, b: &ParamVector) -> f64 {
    a.dot(b).unwrap() / (a.norm() * b.norm())
}

/// Max relative error of each analytic gradient against central
/// differences: supervised, weighted unlabeled, C-reg objective in φ, and
/// C-reg objective in w.
pub fn gradient_errors(inst: &Instance) -> [f64; 4] {
    let supervised = check_gradient(
        |p| mean_loss(&inst.spec, p, &inst.x, &inst.y),
        grad(&inst.spec, &inst.phi, &inst.x, Targets::Hard(&inst.y), None).unwrap(),
        &inst.phi,
        FD_STEP,
    )
    .unwrap();

    let weighted_loss = |p: &ParamVector| -> feddure::Result<f64> {
        let logits = inst.spec.forward(p, &inst.u)?;
        let ce = feddure::numerics::cross_entropy(&logits, Targets::Hard(&inst.pseudo))?;
        let n = inst.m.len() as f64;
        Ok(ce.per_example.iter().zip(&inst.m).map(|(c, w)| c * w).sum::<f64>() / n)
    };
    let weighted = check_gradient(
        weighted_loss,
        grad(&inst.spec, &inst.phi, &inst.u, Targets::Hard(&inst.pseudo), Some(&inst.m)).unwrap(),
        &inst.phi,
        FD_STEP,
    )
    .unwrap();

    let objective = WeightedPseudoObjective {
        spec: &inst.spec,
        weighting: Weighting::Regulator(&inst.freg),
        strong: &inst.u,
        pseudo: &inst.pseudo,
        stop_grad_through_weight: false,
    };
    let product = check_gradient(|p| objective.value(p), objective.grad_phi(&inst.phi).unwrap(), &inst.phi, FD_STEP).unwrap();

    let in_w = |w: &ParamVector| {
        let f = inst.freg.with_params(w.clone())?;
        WeightedPseudoObjective {
            weighting: Weighting::Regulator(&f),
            ..objective
        }
        .value(&inst.phi)
    };
    let regulator = check_gradient(in_w, objective.grad_w(&inst.phi).unwrap(), inst.freg.params(), FD_STEP).unwrap();

    [
        supervised.max_rel_error,
        weighted.max_rel_error,
        product.max_rel_error,
        regulator.max_rel_error,
    ]
}

pub fn meta_config(mode: MetaGradMode) -> MetaGradConfig {
    MetaGradConfig {
        mode,
        eta_s: 0.05,
        eta_w: 0.1,
        ..MetaGradConfig::default()
    }
}

/// Cosine and norm ratio of the darts_fd meta-gradient against the exact
/// numeric one.
pub fn meta_fidelity(inst: &Instance) -> (f64, f64) {
    let run = |mode| {
        freg_meta_gradient(&inst.spec, &inst.freg, &inst.phi, &inst.x, &inst.y, &inst.u, &inst.pseudo, &meta_config(mode))
            .unwrap()
            .0
    };
    let exact = run(MetaGradMode::ExactNumeric);
    let darts = run(MetaGradMode::DartsFd);
    (cosine(&exact, &darts), darts.norm() / exact.norm())
}

/// Reward `d` after one C-reg step on a batch drawn from the labeled
/// distribution. With `flip`, each pseudo-label is shifted to a wrong class.
pub fn reward_trial(seed: u64, flip: bool) -> f64 {
    let classes = 3;
    let dim = 2;
    let mut rng = stream_rng(seed, Stream::LocalTraining, &[0xD]);
    let means = feddure::data::class_means(classes, dim);
    let draw = |n: usize, rng: &mut SimRng| {
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&c| means[c].iter().map(|m| m + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        (Tensor::from_rows(&rows).unwrap(), labels)
    };
    let (x, y) = draw(64, &mut rng);
    let (u, truth) = draw(64, &mut rng);
    let pseudo: Vec<usize> = if flip {
        truth.iter().map(|&c| (c + 1 + rng.random_range(0..classes - 1)) % classes).collect()
    } else {
        truth
    };
    let spec = MlpSpec::classifier(dim, &[16], classes).unwrap();
    let phi = spec.init_params(&mut rng);
    let next = creg_one_step(&spec, &phi, Weighting::Constant(1.0), &u, &pseudo, 0.1, false).unwrap();
    entropy_difference(&spec, &phi, &next, &x, &y).unwrap().d
}

/// One-sided exact binomial sign test: P(X ≥ k) for X ~ Bin(n, 1/2).
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for i in k..=n {
        total += binomial(n, i);
    }
    total / 2f64.powi(n as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coordinatewise `Σ_k w_k θ_k` with plain loops over flattened vectors.
pub fn scalar_weighted_mean(params: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; params[0].len()];
    for (p, w) in params.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(p) {
            *o += w / total * v;
        }
    }
    out
}

/// Class histogram of `labels[i]` over the given indices, computed directly.
pub fn histogram(labels: &[usize], classes: usize, indices: &[usize]) -> Vec<f64> {
    let mut h = vec![0.0; classes];
    for &i in indices {
        h[labels[i]] += 1.0;
    }
    let n: f64 = h.iter().sum();
    h.iter().map(|v| v / n).collect()
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}
