//! Local training on one client: the FedDure iteration and the two
//! FedAvg baselines.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, AugmentSpec, ClientData, Strength};
use crate::error::{Error, Result};
use crate::numerics::{grad, mean_loss, MlpSpec, Optimizer, OptimizerKind, ParamVector, Targets, Tensor};
use crate::regulators::{
    creg_one_step, entropy_difference, freg_update, instance_weights, pseudo_labels_from_weak,
    FReg, MetaGradConfig, MetaGradMode, RewardSignal, Weighting, DEFAULT_HIDDEN,
};
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Feddure,
    FedavgSupervised,
    FedavgFixmatch,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [
        Algorithm::Feddure,
        Algorithm::FedavgSupervised,
        Algorithm::FedavgFixmatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Feddure => "feddure",
            Algorithm::FedavgSupervised => "fedavg_supervised",
            Algorithm::FedavgFixmatch => "fedavg_fixmatch",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{s}`")))
    }
}

/// Overrides that pin parts of the FedDure iteration for ablations and
/// equivalence tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    /// Use this weight for every unlabeled example instead of F-reg; F-reg
    /// is then never updated.
    pub fixed_weight: Option<f64>,
    /// Use this reward instead of the measured entropy difference.
    pub fixed_reward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalHyperparams {
    /// Local model learning rate.
    pub lr: f64,
    /// C-reg step size, used by both the probe and the persistent step.
    pub lr_creg: f64,
    /// F-reg step size.
    pub lr_freg: f64,
    pub batch_size: usize,
    pub unlabeled_batch_size: usize,
    /// Local iterations per round; ignored when `local_epochs` is set.
    pub local_iters: usize,
    /// Each epoch is `⌈N_k / batch_size⌉` iterations.
    pub local_epochs: Option<usize>,
    /// FixMatch confidence threshold.
    pub threshold: f64,
    pub meta_mode: MetaGradMode,
    pub fd_epsilon_scale: f64,
    pub stop_grad_through_weight: bool,
    /// Optimizer for the local model; state is fresh every round.
    pub optimizer: OptimizerKind,
    pub freg_hidden: usize,
    /// Re-initialize F-reg at the start of every round.
    pub reset_freg: bool,
    pub augment: AugmentSpec,
    pub ablation: Ablation,
}

impl Default for LocalHyperparams {
    fn default() -> Self {
        LocalHyperparams {
            lr: 5e-4,
            lr_creg: 5e-4,
            lr_freg: 5e-4,
            batch_size: 10,
            unlabeled_batch_size: 10,
            local_iters: 1,
            local_epochs: None,
            threshold: 0.95,
            meta_mode: MetaGradMode::DartsFd,
            fd_epsilon_scale: 1e-3,
            stop_grad_through_weight: false,
            optimizer: OptimizerKind::Sgd,
            freg_hidden: DEFAULT_HIDDEN,
            reset_freg: false,
            augment: AugmentSpec::identity(),
            ablation: Ablation::default(),
        }
    }
}

impl LocalHyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr", self.lr), ("lr_creg", self.lr_creg), ("lr_freg", self.lr_freg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.batch_size == 0 || self.unlabeled_batch_size == 0 {
            return Err(Error::InvalidArgument("batch sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        if self.freg_hidden == 0 {
            return Err(Error::InvalidArgument("freg_hidden must be positive".into()));
        }
        self.meta().validate()
    }

    pub fn meta(&self) -> MetaGradConfig {
        MetaGradConfig {
            mode: self.meta_mode,
            fd_epsilon_scale: self.fd_epsilon_scale,
            eta_s: self.lr_creg,
            eta_w: self.lr_freg,
            stop_grad_through_weight: self.stop_grad_through_weight,
            ..MetaGradConfig::default()
        }
    }

    pub fn iterations(&self, client_len: usize) -> usize {
        match self.local_epochs {
            Some(e) => e * client_len.div_ceil(self.batch_size),
            None => self.local_iters,
        }
    }
}

/// Per-client training context that outlives a round.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub data: ClientData,
    /// Persists across rounds unless `reset_freg` is set.
    pub freg: FReg,
}

impl ClientState {
    pub fn new(id: usize, data: ClientData, freg_hidden: usize, seed: u64) -> Self {
        let freg = FReg::init(data.class_count(), freg_hidden, &mut freg_rng(seed, id, None));
        ClientState { id, data, freg }
    }
}

fn freg_rng(seed: u64, id: usize, round: Option<usize>) -> SimRng {
    match round {
        None => stream_rng(seed, Stream::RegulatorInit, &[id as u64]),
        Some(r) => stream_rng(seed, Stream::RegulatorInit, &[id as u64, r as u64 + 1]),
    }
}

/// Identifies a round so the client can derive its random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundContext {
    pub seed: u64,
    pub round: usize,
}

impl RoundContext {
    pub fn rng(&self, client: usize) -> SimRng {
        stream_rng(self.seed, Stream::LocalTraining, &[client as u64, self.round as u64])
    }
}

/// Batches for one local iteration. `weak` and `strong` are single
/// augmentation draws of the same unlabeled rows and are reused by every
/// term of the iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationBatch {
    pub labeled_x: Tensor,
    pub labeled_y: Vec<usize>,
    pub weak: Option<Tensor>,
    pub strong: Option<Tensor>,
}

fn sample_indices<R: Rng + ?Sized>(len: usize, size: usize, rng: &mut R) -> Vec<usize> {
    if len >= size {
        index::sample(rng, len, size).into_vec()
    } else {
        (0..size).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Draws labeled and unlabeled batches independently and uniformly; a set
/// smaller than its batch size is sampled with replacement.
pub fn sample_batch<R: Rng + ?Sized>(
    data: &ClientData,
    hp: &LocalHyperparams,
    rng: &mut R,
) -> Result<IterationBatch> {
    if data.labeled_len() == 0 {
        return Err(Error::EmptyBatch("client has no labeled examples"));
    }
    let li = sample_indices(data.labeled_len(), hp.batch_size, rng);
    let labeled_x = data.labeled_features().select_rows(&li);
    let labeled_y = li.iter().map(|&i| data.labeled_labels()[i]).collect();
    let (weak, strong) = match data.unlabeled_features() {
        Some(u) if u.rows() > 0 => {
            let ui = sample_indices(u.rows(), hp.unlabeled_batch_size, rng);
            let batch = u.select_rows(&ui);
            let weak = augment(&batch, &hp.augment, Strength::Weak, rng);
            let strong = augment(&batch, &hp.augment, Strength::Strong, rng);
            (Some(weak), Some(strong))
        }
        _ => (None, None),
    };
    Ok(IterationBatch {
        labeled_x,
        labeled_y,
        weak,
        strong,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    /// Reward; 0 when not applicable.
    pub d: f64,
    /// Mean instance weight (FedDure) or mask pass rate (FixMatch).
    pub mean_weight: f64,
    pub freg_skipped: bool,
    pub grad_norm_s: f64,
    pub grad_norm_u: f64,
    pub grad_norm_d: f64,
    /// `‖g_s + g_u + g_d‖₂`.
    pub total_grad_norm: f64,
    /// Labeled loss of the local model before the step.
    pub labeled_loss: f64,
}

#[derive(Clone, Debug)]
pub struct LocalRoundResult {
    pub client_id: usize,
    pub updated_params: ParamVector,
    /// Client dataset size, labeled plus unlabeled.
    pub sample_weight: usize,
    pub iteration_logs: Vec<IterationLog>,
}

/// Points in the FedDure iteration, reported in execution order.
#[derive(Debug)]
pub enum ScheduleEvent<'a> {
    RoundStart {
        theta: &'a ParamVector,
        phi: &'a ParamVector,
    },
    PseudoLabels(&'a [usize]),
    ProbeStep {
        freg: &'a FReg,
        phi_minus: &'a ParamVector,
    },
    FRegUpdated {
        previous: &'a FReg,
        next: &'a FReg,
        skipped: bool,
    },
    CRegUpdated {
        weighting: Weighting<'a>,
        phi_next: &'a ParamVector,
    },
    InstanceWeights {
        weighting: Weighting<'a>,
        weights: &'a [f64],
    },
    Reward(RewardSignal),
    LocalStep {
        theta_next: &'a ParamVector,
    },
}

pub trait ScheduleObserver {
    fn observe(&mut self, event: ScheduleEvent<'_>);
}

pub struct NoObserver;

impl ScheduleObserver for NoObserver {
    fn observe(&mut self, _: ScheduleEvent<'_>) {}
}

fn finite(term: &'static str, g: &ParamVector) -> Result<()> {
    if g.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteGradient { term })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Output of one FedDure iteration.
#[derive(Clone, Debug)]
pub struct FedDureStep {
    pub theta: ParamVector,
    pub phi: ParamVector,
    pub freg: FReg,
    pub log: IterationLog,
}

/// Iteration-level training on explicit batches.
pub struct LocalTrainer<'a> {
    pub spec: &'a MlpSpec,
    pub hp: &'a LocalHyperparams,
}

impl<'a> LocalTrainer<'a> {
    fn supervised_grad(&self, theta: &ParamVector, batch: &IterationBatch) -> Result<(ParamVector, f64)> {
        let g_s = grad(self.spec, theta, &batch.labeled_x, Targets::Hard(&batch.labeled_y), None)?;
        finite("g_s", &g_s)?;
        let loss = mean_loss(self.spec, theta, &batch.labeled_x, &batch.labeled_y)?;
        Ok((g_s, loss))
    }

    pub fn feddure_iteration(
        &self,
        theta: &ParamVector,
        phi: &ParamVector,
        freg: &FReg,
        batch: &IterationBatch,
        optimizer: &mut Optimizer,
        observer: &mut dyn ScheduleObserver,
    ) -> Result<FedDureStep> {
        let spec = self.spec;
        let hp = self.hp;
        let (g_s, labeled_loss) = self.supervised_grad(theta, batch)?;
        let (weak, strong) = match (&batch.weak, &batch.strong) {
            (Some(w), Some(s)) if s.rows() > 0 => (w, s),
            _ => {
                let next = optimizer.step(theta, &g_s, hp.lr)?;
                observer.observe(ScheduleEvent::LocalStep { theta_next: &next });
                let norm = g_s.norm();
                return Ok(FedDureStep {
                    theta: next,
                    phi: phi.clone(),
                    freg: freg.clone(),
                    log: IterationLog {
                        grad_norm_s: norm,
                        total_grad_norm: norm,
                        labeled_loss,
                        ..IterationLog::default()
                    },
                });
            }
        };

        let pseudo = pseudo_labels_from_weak(spec, theta, weak)?.labels;
        observer.observe(ScheduleEvent::PseudoLabels(&pseudo));

        let meta = hp.meta();
        let (next_freg, skipped) = match hp.ablation.fixed_weight {
            Some(_) => (freg.clone(), true),
            None => {
                let up = freg_update(spec, freg, phi, &batch.labeled_x, &batch.labeled_y, strong, &pseudo, &meta)?;
                observer.observe(ScheduleEvent::ProbeStep {
                    freg,
                    phi_minus: &up.phi_minus,
                });
                observer.observe(ScheduleEvent::FRegUpdated {
                    previous: freg,
                    next: &up.next,
                    skipped: up.skipped,
                });
                (up.next, up.skipped)
            }
        };
        let weighting = match hp.ablation.fixed_weight {
            Some(c) => Weighting::Constant(c),
            None => Weighting::Regulator(&next_freg),
        };

        let phi_next = creg_one_step(spec, phi, weighting, strong, &pseudo, hp.lr_creg, hp.stop_grad_through_weight)?;
        observer.observe(ScheduleEvent::CRegUpdated {
            weighting,
            phi_next: &phi_next,
        });

        let m = match weighting {
            Weighting::Regulator(f) => instance_weights(spec, theta, f, strong)?,
            Weighting::Constant(c) => vec![c; strong.rows()],
        };
        observer.observe(ScheduleEvent::InstanceWeights {
            weighting,
            weights: &m,
        });
        let g_u = grad(spec, theta, strong, Targets::Hard(&pseudo), Some(&m))?;
        finite("g_u", &g_u)?;

        let reward = entropy_difference(spec, phi, &phi_next, &batch.labeled_x, &batch.labeled_y)?;
        observer.observe(ScheduleEvent::Reward(reward));
        let d = hp.ablation.fixed_reward.unwrap_or(reward.d);
        let g_d = grad(spec, theta, strong, Targets::Hard(&pseudo), None)?.scale(d);
        finite("g_d", &g_d)?;

        let total = g_s.add(&g_u)?.add(&g_d)?;
        let theta_next = optimizer.step(theta, &total, hp.lr)?;
        observer.observe(ScheduleEvent::LocalStep {
            theta_next: &theta_next,
        });
        Ok(FedDureStep {
            theta: theta_next,
            phi: phi_next,
            freg: next_freg,
            log: IterationLog {
                d,
                mean_weight: mean(&m),
                freg_skipped: skipped,
                grad_norm_s: g_s.norm(),
                grad_norm_u: g_u.norm(),
                grad_norm_d: g_d.norm(),
                total_grad_norm: total.norm(),
                labeled_loss,
            },
        })
    }

    /// Labeled CE plus strong-view CE on pseudo-labels whose weak-view
    /// confidence reaches the threshold. The mask enters as 0/1 weights, so
    /// the unlabeled term is averaged over the whole batch.
    pub fn fixmatch_iteration(
        &self,
        theta: &ParamVector,
        batch: &IterationBatch,
        optimizer: &mut Optimizer,
    ) -> Result<(ParamVector, IterationLog)> {
        let (g_s, labeled_loss) = self.supervised_grad(theta, batch)?;
        let mut log = IterationLog {
            grad_norm_s: g_s.norm(),
            labeled_loss,
            ..IterationLog::default()
        };
        let total = match (&batch.weak, &batch.strong) {
            (Some(weak), Some(strong)) if strong.rows() > 0 => {
                let pl = pseudo_labels_from_weak(self.spec, theta, weak)?;
                let mask: Vec<f64> = pl
                    .confidence
                    .iter()
                    .map(|&c| if c >= self.hp.threshold { 1.0 } else { 0.0 })
                    .collect();
                let g_u = grad(self.spec, theta, strong, Targets::Hard(&pl.labels), Some(&mask))?;
                finite("g_u", &g_u)?;
                log.mean_weight = mean(&mask);
                log.grad_norm_u = g_u.norm();
                g_s.add(&g_u)?
            }
            _ => g_s,
        };
        log.total_grad_norm = total.norm();
        Ok((optimizer.step(theta, &total, self.hp.lr)?, log))
    }

    pub fn supervised_iteration(
        &self,
        theta: &ParamVector,
        batch: &IterationBatch,
        optimizer: &mut Optimizer,
    ) -> Result<(ParamVector, IterationLog)> {
        let (g_s, labeled_loss) = self.supervised_grad(theta, batch)?;
        let norm = g_s.norm();
        let log = IterationLog {
            grad_norm_s: norm,
            total_grad_norm: norm,
            labeled_loss,
            ..IterationLog::default()
        };
        Ok((optimizer.step(theta, &g_s, self.hp.lr)?, log))
    }
}

fn check_round(state: &ClientState, spec: &MlpSpec, global: &ParamVector, hp: &LocalHyperparams) -> Result<()> {
    hp.validate()?;
    spec.check_params(global)?;
    if state.data.labeled_len() == 0 {
        return Err(Error::EmptyBatch("client has no labeled examples"));
    }
    Ok(())
}

fn result(state: &ClientState, params: ParamVector, logs: Vec<IterationLog>) -> LocalRoundResult {
    LocalRoundResult {
        client_id: state.id,
        updated_params: params,
        sample_weight: state.data.len(),
        iteration_logs: logs,
    }
}

pub fn feddure_local_round(
    state: &mut ClientState,
    spec: &MlpSpec,
    global: &ParamVector,
    hp: &LocalHyperparams,
    ctx: RoundContext,
) -> Result<LocalRoundResult> {
    feddure_local_round_observed(state, spec, global, hp, ctx, &mut NoObserver)
}

/// FedDure local round reporting every schedule event to `observer`.
pub fn feddure_local_round_observed(
    state: &mut ClientState,
    spec: &MlpSpec,
    global: &ParamVector,
    hp: &LocalHyperparams,
    ctx: RoundContext,
    observer: &mut dyn ScheduleObserver,
) -> Result<LocalRoundResult> {
    check_round(state, spec, global, hp)?;
    if hp.reset_freg {
        state.freg = FReg::init(
            state.data.class_count(),
            hp.freg_hidden,
            &mut freg_rng(ctx.seed, state.id, Some(ctx.round)),
        );
    }
    let mut rng = ctx.rng(state.id);
    let trainer = LocalTrainer { spec, hp };
    let mut theta = global.clone();
    let mut phi = global.clone();
    observer.observe(ScheduleEvent::RoundStart {
        theta: &theta,
        phi: &phi,
    });
    let mut optimizer = Optimizer::new(hp.optimizer, global);
    let iters = hp.iterations(state.data.len());
    let mut logs = Vec::with_capacity(iters);
    for _ in 0..iters {
        let batch = sample_batch(&state.data, hp, &mut rng)?;
        let step = trainer.feddure_iteration(&theta, &phi, &state.freg, &batch, &mut optimizer, observer)?;
        theta = step.theta;
        phi = step.phi;
        state.freg = step.freg;
        logs.push(step.log);
    }
    Ok(result(state, theta, logs))
}

pub fn supervised_local_round(
    state: &mut ClientState,
    spec: &MlpSpec,
    global: &ParamVector,
    hp: &LocalHyperparams,
    ctx: RoundContext,
) -> Result<LocalRoundResult> {
    check_round(state, spec, global, hp)?;
    let mut rng = ctx.rng(state.id);
    let trainer = LocalTrainer { spec, hp };
    let mut theta = global.clone();
    let mut optimizer = Optimizer::new(hp.optimizer, global);
    let iters = hp.iterations(state.data.len());
    let mut logs = Vec::with_capacity(iters);
    for _ in 0..iters {
        let batch = sample_batch(&state.data, hp, &mut rng)?;
        let (next, log) = trainer.supervised_iteration(&theta, &batch, &mut optimizer)?;
        theta = next;
        logs.push(log);
    }
    Ok(result(state, theta, logs))
}

pub fn fixmatch_local_round(
    state: &mut ClientState,
    spec: &MlpSpec,
    global: &ParamVector,
    hp: &LocalHyperparams,
    ctx: RoundContext,
) -> Result<LocalRoundResult> {
    check_round(state, spec, global, hp)?;
    let mut rng = ctx.rng(state.id);
    let trainer = LocalTrainer { spec, hp };
    let mut theta = global.clone();
    let mut optimizer = Optimizer::new(hp.optimizer, global);
    let iters = hp.iterations(state.data.len());
    let mut logs = Vec::with_capacity(iters);
    for _ in 0..iters {
        let batch = sample_batch(&state.data, hp, &mut rng)?;
        let (next, log) = trainer.fixmatch_iteration(&theta, &batch, &mut optimizer)?;
        theta = next;
        logs.push(log);
    }
    Ok(result(state, theta, logs))
}

pub fn local_round(
    algorithm: Algorithm,
    state: &mut ClientState,
    spec: &MlpSpec,
    global: &ParamVector,
    hp: &LocalHyperparams,
    ctx: RoundContext,
) -> Result<LocalRoundResult> {
    match algorithm {
        Algorithm::Feddure => feddure_local_round(state, spec, global, hp, ctx),
        Algorithm::FedavgSupervised => supervised_local_round(state, spec, global, hp, ctx),
        Algorithm::FedavgFixmatch => fixmatch_local_round(state, spec, global, hp, ctx),
    }
}

#[cfg(test)]
mod tests;
