use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::error::{Error, Result};

fn check_lr(lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    Ok(())
}

/// `params − lr · grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    check_lr(lr)?;
    params.axpy(-lr, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.eps.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "Adam requires 0 ≤ beta < 1 and eps > 0, got {self:?}"
            )))
        }
    }
}

/// Moment estimates and step count. A fresh state has zero moments and `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first: ParamVector,
    pub second: ParamVector,
}

impl AdamState {
    pub fn fresh(template: &ParamVector) -> Self {
        AdamState {
            step: 0,
            first: template.zeros_like(),
            second: template.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. Returns the new parameters and state.
pub fn adam_step(
    state: &AdamState,
    params: &ParamVector,
    grad: &ParamVector,
    lr: f64,
    cfg: AdamConfig,
) -> Result<(ParamVector, AdamState)> {
    check_lr(lr)?;
    cfg.validate()?;
    params.check_compatible(grad)?;
    params.check_compatible(&state.first)?;
    params.check_compatible(&state.second)?;
    let step = state.step + 1;
    let first = state
        .first
        .zip_map_checked(grad, |m, g| cfg.beta1 * m + (1.0 - cfg.beta1) * g)?;
    let second = state
        .second
        .zip_map_checked(grad, |v, g| cfg.beta2 * v + (1.0 - cfg.beta2) * g * g)?;
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    let direction = first.zip_map_checked(&second, |m, v| (m / c1) / ((v / c2).sqrt() + cfg.eps))?;
    let next = params.axpy(-lr, &direction)?;
    Ok((
        next,
        AdamState {
            step,
            first,
            second,
        },
    ))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam(AdamConfig),
}

/// Persistent optimizer bound to one parameter vector.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd,
    Adam { cfg: AdamConfig, state: AdamState },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, template: &ParamVector) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam(cfg) => Optimizer::Adam {
                cfg,
                state: AdamState::fresh(template),
            },
        }
    }

    pub fn step(&mut self, params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
        match self {
            Optimizer::Sgd => sgd_step(params, grad, lr),
            Optimizer::Adam { cfg, state } => {
                let (next, new_state) = adam_step(state, params, grad, lr, *cfg)?;
                *state = new_state;
                Ok(next)
            }
        }
    }
}
