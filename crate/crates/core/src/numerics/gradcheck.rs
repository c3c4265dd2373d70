use super::ParamVector;
use crate::error::{Error, Result};

/// Floor on the relative-error denominator so coordinates whose true
/// derivative is ≈ 0 are judged by absolute error; central differences
/// carry about `1e-16 · |loss| / step` of rounding noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Central-difference estimate of `∇ loss` at `params`.
pub fn numeric_grad<F>(loss: F, params: &ParamVector, step: f64) -> Result<ParamVector>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = params.clone();
    let mut flat = Vec::with_capacity(params.len());
    for coordinate in 0..params.len() {
        let (seg, offset) = params.locate(coordinate).unwrap();
        let x = *probe.coord_mut(seg, offset);
        let eval = |probe: &ParamVector| -> Result<f64> {
            let v = loss(probe)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteLoss {
                    coordinate,
                    segment: params.segments()[seg].name.clone(),
                    offset,
                })
            }
        };
        *probe.coord_mut(seg, offset) = x + step;
        let plus = eval(&probe)?;
        *probe.coord_mut(seg, offset) = x - step;
        let minus = eval(&probe)?;
        *probe.coord_mut(seg, offset) = x;
        flat.push((plus - minus) / (2.0 * step));
    }
    params.with_flat(&flat)
}

#[derive(Clone, Debug)]
pub struct GradOracleReport {
    pub analytic_grad: ParamVector,
    pub numeric_grad: ParamVector,
    /// `max_i |a_i − n_i| / max(|a_i|, |n_i|, RELATIVE_ERROR_FLOOR)`.
    pub max_rel_error: f64,
}

impl GradOracleReport {
    pub fn compare(analytic: ParamVector, numeric: ParamVector) -> Result<Self> {
        analytic.check_compatible(&numeric)?;
        let max_rel_error = analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR))
            .fold(0.0, f64::max);
        Ok(GradOracleReport {
            analytic_grad: analytic,
            numeric_grad: numeric,
            max_rel_error,
        })
    }
}

/// Runs `numeric_grad` on `loss` and compares it with `analytic`.
pub fn check_gradient<F>(
    loss: F,
    analytic: ParamVector,
    params: &ParamVector,
    step: f64,
) -> Result<GradOracleReport>
where
    F: Fn(&ParamVector) -> Result<f64>,
{
    let numeric = numeric_grad(loss, params, step)?;
    GradOracleReport::compare(analytic, numeric)
}
