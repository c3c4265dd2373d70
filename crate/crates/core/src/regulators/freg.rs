use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    backward_widths, check_widths, init_widths, trace_widths, zero_widths, ParamVector, Tensor,
    Trace,
};

pub const DEFAULT_HIDDEN: usize = 128;

/// Fine-grained regulator: class probabilities → ReLU hidden layer → sigmoid
/// scalar weight in `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FReg {
    classes: usize,
    hidden: usize,
    params: ParamVector,
}

/// Outputs are clamped into the open interval so saturated logits still
/// produce a weight strictly below 1.
const UPPER: f64 = 1.0 - f64::EPSILON;
const LOWER: f64 = f64::MIN_POSITIVE;

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub(crate) struct FRegPass {
    trace: Trace,
    /// Unclamped sigmoid outputs.
    raw: Vec<f64>,
}

impl FReg {
    pub fn from_params(classes: usize, hidden: usize, params: ParamVector) -> Result<Self> {
        check_widths(&[classes, hidden, 1], &params)?;
        Ok(FReg {
            classes,
            hidden,
            params,
        })
    }

    pub fn init<R: Rng + ?Sized>(classes: usize, hidden: usize, rng: &mut R) -> Self {
        FReg {
            classes,
            hidden,
            params: init_widths(&[classes, hidden, 1], rng),
        }
    }

    /// All-zero parameters: every weight equals `σ(0) = 0.5`.
    pub fn zeros(classes: usize, hidden: usize) -> Self {
        FReg {
            classes,
            hidden,
            params: zero_widths(&[classes, hidden, 1]),
        }
    }

    /// Constant output `value ∈ (0, 1)`: zero weights, output bias `logit(value)`.
    pub fn constant(classes: usize, hidden: usize, value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "constant F-reg output must lie in (0, 1), got {value}"
            )));
        }
        let mut f = FReg::zeros(classes, hidden);
        let bias = (value / (1.0 - value)).ln();
        *f.params.coord_mut(3, 0) = bias;
        Ok(f)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn with_params(&self, params: ParamVector) -> Result<FReg> {
        FReg::from_params(self.classes, self.hidden, params)
    }

    fn widths(&self) -> [usize; 3] {
        [self.classes, self.hidden, 1]
    }

    pub(crate) fn pass(&self, probs: &Tensor) -> Result<FRegPass> {
        let trace = trace_widths(&self.widths(), &self.params, probs)?;
        let raw = trace.output().values().iter().map(|&s| sigmoid(s)).collect();
        Ok(FRegPass { trace, raw })
    }

    /// One weight per row of `probs`.
    pub fn weights(&self, probs: &Tensor) -> Result<Vec<f64>> {
        Ok(self.pass(probs)?.weights())
    }

    /// For per-row coefficients `c_i`, returns `Σ_i c_i ∇_w H_i` and the rows
    /// `c_i ∂H_i/∂p_i`.
    pub(crate) fn backward(&self, pass: &FRegPass, coeffs: &[f64]) -> Result<(ParamVector, Tensor)> {
        if coeffs.len() != pass.raw.len() {
            return Err(Error::shape("F-reg coefficients", pass.raw.len(), coeffs.len()));
        }
        let ds: Vec<f64> = pass
            .raw
            .iter()
            .zip(coeffs)
            .map(|(&h, &c)| c * h * (1.0 - h))
            .collect();
        let grad_out = Tensor::from_parts(vec![ds.len(), 1], ds);
        let b = backward_widths(&self.widths(), &self.params, &pass.trace, &grad_out)?;
        Ok((b.params, b.input))
    }
}

impl FRegPass {
    pub(crate) fn weights(&self) -> Vec<f64> {
        self.raw.iter().map(|h| h.clamp(LOWER, UPPER)).collect()
    }
}
