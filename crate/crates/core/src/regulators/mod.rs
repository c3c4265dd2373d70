//! Dual-regulator mathematics.
//!
//! Notation used below: `θ` local model, `φ` C-reg, `w` F-reg, `ŷ`
//! pseudo-labels, `u` strongly augmented unlabeled batch, `(x, y)` labeled
//! batch, `H_i(φ) = f_w(softmax(f_d(u_i; φ)); w)`.

mod freg;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use freg::{FReg, DEFAULT_HIDDEN};

use crate::data::{augment, AugmentSpec, Strength};
use crate::error::{Error, Result};
use crate::numerics::{
    argmax, cross_entropy, grad, mean_loss, numeric_grad, softmax, MlpSpec, ParamVector, Targets,
    Tensor,
};

/// Pseudo-labels with the confidence (max softmax) of each prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
}

/// `ŷ_i = argmax f_l(weak_i; θ)`, ties to the lowest class.
pub fn pseudo_labels_from_weak(
    spec: &MlpSpec,
    theta: &ParamVector,
    weak: &Tensor,
) -> Result<PseudoLabels> {
    let probs = softmax(&spec.forward(theta, weak)?);
    let mut labels = Vec::with_capacity(probs.rows());
    let mut confidence = Vec::with_capacity(probs.rows());
    for row in probs.row_iter() {
        let c = argmax(row);
        labels.push(c);
        confidence.push(row[c]);
    }
    Ok(PseudoLabels { labels, confidence })
}

/// Weakly augments `unlabeled` and labels it with the local model.
pub fn pseudo_label<R: Rng + ?Sized>(
    spec: &MlpSpec,
    theta: &ParamVector,
    unlabeled: &Tensor,
    aug: &AugmentSpec,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let weak = augment(unlabeled, aug, Strength::Weak, rng);
    Ok(pseudo_labels_from_weak(spec, theta, &weak)?.labels)
}

/// Source of the per-example weights `H_i` in the C-reg objective.
#[derive(Clone, Copy, Debug)]
pub enum Weighting<'a> {
    Regulator(&'a FReg),
    /// Fixed weight for every example; `Constant(1.0)` gives the plain
    /// pseudo-label cross-entropy.
    Constant(f64),
}

impl<'a> From<&'a FReg> for Weighting<'a> {
    fn from(f: &'a FReg) -> Self {
        Weighting::Regulator(f)
    }
}

/// `G(φ) = mean_i H_i(φ) · CE(ŷ_i, f_d(u_i; φ))`, the objective behind
/// every C-reg step.
#[derive(Clone, Copy)]
pub struct WeightedPseudoObjective<'a> {
    pub spec: &'a MlpSpec,
    pub weighting: Weighting<'a>,
    pub strong: &'a Tensor,
    pub pseudo: &'a [usize],
    /// Treat `H_i` as a constant when differentiating with respect to `φ`.
    pub stop_grad_through_weight: bool,
}

impl<'a> WeightedPseudoObjective<'a> {
    fn check(&self) -> Result<()> {
        if self.strong.rows() != self.pseudo.len() {
            return Err(Error::shape(
                "pseudo-labels vs unlabeled batch",
                self.strong.rows(),
                self.pseudo.len(),
            ));
        }
        if let Weighting::Regulator(f) = self.weighting {
            if f.classes() != self.spec.class_count() {
                return Err(Error::shape("F-reg input width", self.spec.class_count(), f.classes()));
            }
        }
        Ok(())
    }

    fn weights(&self, probs: &Tensor) -> Result<Vec<f64>> {
        match self.weighting {
            Weighting::Regulator(f) => f.weights(probs),
            Weighting::Constant(c) => Ok(vec![c; probs.rows()]),
        }
    }

    pub fn value(&self, phi: &ParamVector) -> Result<f64> {
        self.check()?;
        let logits = self.spec.forward(phi, self.strong)?;
        let ce = cross_entropy(&logits, Targets::Hard(self.pseudo))?;
        let h = self.weights(&softmax(&logits))?;
        let n = h.len() as f64;
        Ok(h.iter().zip(&ce.per_example).map(|(a, b)| a * b).sum::<f64>() / n)
    }

    /// `∇_φ G`, differentiating through both `H_i` and the cross-entropy
    /// unless `stop_grad_through_weight` is set.
    pub fn grad_phi(&self, phi: &ParamVector) -> Result<ParamVector> {
        self.check()?;
        let trace = self.spec.trace(phi, self.strong)?;
        let logits = trace.output();
        let probs = softmax(logits);
        let ce = cross_entropy(logits, Targets::Hard(self.pseudo))?;
        let pass = match self.weighting {
            Weighting::Regulator(f) => Some(f.pass(&probs)?),
            Weighting::Constant(_) => None,
        };
        let h = match &pass {
            Some(p) => p.weights(),
            None => self.weights(&probs)?,
        };
        let n = h.len() as f64;
        let classes = probs.cols();

        // H_i/n · (p_i − e_ŷ)
        let mut dz = probs.clone();
        for (r, &y) in self.pseudo.iter().enumerate() {
            let row = dz.row_mut(r);
            row[y] -= 1.0;
            for v in row.iter_mut() {
                *v *= h[r] / n;
            }
        }
        if let (Weighting::Regulator(f), Some(pass), false) =
            (self.weighting, &pass, self.stop_grad_through_weight)
        {
            // CE_i/n · J_softmax(p_i) · ∂H_i/∂p_i, with J g = p ⊙ (g − p·g)
            let coeffs: Vec<f64> = ce.per_example.iter().map(|c| c / n).collect();
            let (_, dp) = f.backward(pass, &coeffs)?;
            for r in 0..probs.rows() {
                let p = probs.row(r);
                let g = dp.row(r);
                let pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                let row = dz.row_mut(r);
                for c in 0..classes {
                    row[c] += p[c] * (g[c] - pg);
                }
            }
        }
        Ok(self.spec.backward(phi, &trace, &dz)?.params)
    }

    /// `∇_w G` at fixed `φ`: `mean_i CE_i · ∇_w H_i`.
    pub fn grad_w(&self, phi: &ParamVector) -> Result<ParamVector> {
        self.check()?;
        let Weighting::Regulator(freg) = self.weighting else {
            return Err(Error::InvalidArgument("constant weighting has no F-reg parameters".into()));
        };
        let logits = self.spec.forward(phi, self.strong)?;
        let probs = softmax(&logits);
        let ce = cross_entropy(&logits, Targets::Hard(self.pseudo))?;
        let n = ce.per_example.len() as f64;
        let coeffs: Vec<f64> = ce.per_example.iter().map(|c| c / n).collect();
        let pass = freg.pass(&probs)?;
        Ok(freg.backward(&pass, &coeffs)?.0)
    }
}

/// One SGD step of C-reg on the weighted pseudo-label objective:
/// `φ' = φ − η_s ∇_φ G(φ)`.
///
/// Called with `w^t` for the probe step `φ^-` and with `w^{t+1}` for the
/// persistent update `φ^{t+1}`.
pub fn creg_one_step<'a>(
    spec: &MlpSpec,
    phi: &ParamVector,
    weighting: impl Into<Weighting<'a>>,
    strong: &Tensor,
    pseudo: &[usize],
    eta_s: f64,
    stop_grad_through_weight: bool,
) -> Result<ParamVector> {
    if pseudo.is_empty() {
        return Err(Error::EmptyBatch("C-reg unlabeled batch"));
    }
    let objective = WeightedPseudoObjective {
        spec,
        weighting: weighting.into(),
        strong,
        pseudo,
        stop_grad_through_weight,
    };
    let g = objective.grad_phi(phi)?;
    crate::numerics::sgd_step(phi, &g, eta_s)
}

/// Learning effect of a C-reg update on labeled data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub d: f64,
    pub loss_before: f64,
    pub loss_after: f64,
}

/// `d = mean CE(y, f_d(x; φ_t)) − mean CE(y, f_d(x; φ_next))`.
pub fn entropy_difference(
    spec: &MlpSpec,
    phi_t: &ParamVector,
    phi_next: &ParamVector,
    labeled_x: &Tensor,
    labeled_y: &[usize],
) -> Result<RewardSignal> {
    if labeled_y.is_empty() {
        return Err(Error::EmptyBatch("labeled batch for entropy difference"));
    }
    let loss_before = mean_loss(spec, phi_t, labeled_x, labeled_y)?;
    let loss_after = mean_loss(spec, phi_next, labeled_x, labeled_y)?;
    Ok(RewardSignal {
        d: loss_before - loss_after,
        loss_before,
        loss_after,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaGradMode {
    /// Central differences of the full composed objective over every F-reg
    /// coordinate. Reference only; cost is two C-reg steps per coordinate.
    ExactNumeric,
    /// Mixed second derivative by a two-point finite difference in `φ`.
    #[default]
    DartsFd,
}

impl std::str::FromStr for MetaGradMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact_numeric" => Ok(MetaGradMode::ExactNumeric),
            "darts_fd" => Ok(MetaGradMode::DartsFd),
            other => Err(Error::InvalidArgument(format!("unknown meta-gradient mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaGradConfig {
    pub mode: MetaGradMode,
    /// `ε = fd_epsilon_scale / ‖v‖₂` in `DartsFd` mode.
    pub fd_epsilon_scale: f64,
    /// Coordinate step of the `ExactNumeric` oracle.
    pub exact_step: f64,
    pub eta_s: f64,
    pub eta_w: f64,
    pub stop_grad_through_weight: bool,
}

impl Default for MetaGradConfig {
    fn default() -> Self {
        MetaGradConfig {
            mode: MetaGradMode::DartsFd,
            fd_epsilon_scale: 1e-3,
            exact_step: 1e-5,
            eta_s: 5e-4,
            eta_w: 5e-4,
            stop_grad_through_weight: false,
        }
    }
}

impl MetaGradConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fd_epsilon_scale > 0.0 && self.fd_epsilon_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fd_epsilon_scale must be positive, got {}",
                self.fd_epsilon_scale
            )));
        }
        if !(self.exact_step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "exact_step must be positive, got {}",
                self.exact_step
            )));
        }
        for (name, v) in [("eta_s", self.eta_s), ("eta_w", self.eta_w)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FRegUpdate {
    pub next: FReg,
    /// `∇_w` of the labeled loss after the probe step.
    pub meta_grad: ParamVector,
    /// Probe step `φ^-(w^t)`.
    pub phi_minus: ParamVector,
    /// Set when `‖v‖₂ = 0` and the update was skipped.
    pub skipped: bool,
}

/// Meta-gradient `∇_w mean CE(y, f_d(x; φ^-(w)))` with
/// `φ^-(w) = φ_t − η_s ∇_φ G(φ_t; w)`, evaluated at `w = freg`.
pub fn freg_meta_gradient(
    spec: &MlpSpec,
    freg: &FReg,
    phi_t: &ParamVector,
    labeled_x: &Tensor,
    labeled_y: &[usize],
    strong: &Tensor,
    pseudo: &[usize],
    cfg: &MetaGradConfig,
) -> Result<(ParamVector, ParamVector, bool)> {
    cfg.validate()?;
    if labeled_y.is_empty() {
        return Err(Error::EmptyBatch("labeled batch for F-reg update"));
    }
    if pseudo.is_empty() {
        return Err(Error::EmptyBatch("unlabeled batch for F-reg update"));
    }
    let stop = cfg.stop_grad_through_weight;
    let phi_minus = creg_one_step(spec, phi_t, freg, strong, pseudo, cfg.eta_s, stop)?;
    match cfg.mode {
        MetaGradMode::ExactNumeric => {
            let outer = |w: &ParamVector| -> Result<f64> {
                let probe = freg.with_params(w.clone())?;
                let phi = creg_one_step(spec, phi_t, &probe, strong, pseudo, cfg.eta_s, stop)?;
                mean_loss(spec, &phi, labeled_x, labeled_y)
            };
            let g = numeric_grad(outer, freg.params(), cfg.exact_step)?;
            Ok((g, phi_minus, false))
        }
        MetaGradMode::DartsFd => {
            let v = grad(spec, &phi_minus, labeled_x, Targets::Hard(labeled_y), None)?;
            let norm = v.norm();
            if norm == 0.0 {
                return Ok((freg.params().zeros_like(), phi_minus, true));
            }
            let eps = cfg.fd_epsilon_scale / norm;
            let objective = WeightedPseudoObjective {
                spec,
                weighting: Weighting::Regulator(freg),
                strong,
                pseudo,
                stop_grad_through_weight: stop,
            };
            let plus = objective.grad_w(&phi_t.axpy(eps, &v)?)?;
            let minus = objective.grad_w(&phi_t.axpy(-eps, &v)?)?;
            // −η_s · (∇_w G(φ+εv) − ∇_w G(φ−εv)) / 2ε
            let scale = -cfg.eta_s / (2.0 * eps);
            Ok((plus.sub(&minus)?.scale(scale), phi_minus, false))
        }
    }
}

/// `w^{t+1} = w^t − η_w · meta-gradient`.
pub fn freg_update(
    spec: &MlpSpec,
    freg: &FReg,
    phi_t: &ParamVector,
    labeled_x: &Tensor,
    labeled_y: &[usize],
    strong: &Tensor,
    pseudo: &[usize],
    cfg: &MetaGradConfig,
) -> Result<FRegUpdate> {
    let (meta_grad, phi_minus, skipped) =
        freg_meta_gradient(spec, freg, phi_t, labeled_x, labeled_y, strong, pseudo, cfg)?;
    let next = if skipped {
        freg.clone()
    } else {
        freg.with_params(crate::numerics::sgd_step(freg.params(), &meta_grad, cfg.eta_w)?)?
    };
    Ok(FRegUpdate {
        next,
        meta_grad,
        phi_minus,
        skipped,
    })
}

/// `m_i = f_w(softmax(f_l(u_i; θ)); w)` on the shared strong batch.
pub fn instance_weights(
    spec: &MlpSpec,
    theta: &ParamVector,
    freg: &FReg,
    strong: &Tensor,
) -> Result<Vec<f64>> {
    let probs = softmax(&spec.forward(theta, strong)?);
    freg.weights(&probs)
}

#[cfg(test)]
mod tests;
