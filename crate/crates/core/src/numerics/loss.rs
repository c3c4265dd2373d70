use super::{MlpSpec, ParamVector, Tensor};
use crate::error::{Error, Result};

/// Supervision for [`cross_entropy`].
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a> {
    Hard(&'a [usize]),
    /// One probability row per example.
    Soft(&'a Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropy {
    pub mean: f64,
    pub per_example: Vec<f64>,
}

/// Row-wise numerically stable softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_targets(logits: &Tensor, targets: Targets<'_>) -> Result<()> {
    let rows = logits.rows();
    let classes = logits.cols();
    match targets {
        Targets::Hard(idx) => {
            if idx.len() != rows {
                return Err(Error::shape("cross-entropy targets", rows, idx.len()));
            }
            if let Some(&bad) = idx.iter().find(|&&c| c >= classes) {
                return Err(Error::ClassIndex {
                    index: bad,
                    classes,
                });
            }
        }
        Targets::Soft(t) => {
            if t.shape() != logits.shape() {
                return Err(Error::shape("soft targets", logits.shape(), t.shape()));
            }
        }
    }
    Ok(())
}

/// Mean of `−Σ_c y_c log softmax(z)_c` over the batch.
pub fn cross_entropy(logits: &Tensor, targets: Targets<'_>) -> Result<CrossEntropy> {
    check_targets(logits, targets)?;
    let per_example: Vec<f64> = logits
        .row_iter()
        .enumerate()
        .map(|(r, row)| {
            let lse = log_sum_exp(row);
            match targets {
                Targets::Hard(idx) => lse - row[idx[r]],
                Targets::Soft(t) => t
                    .row(r)
                    .iter()
                    .zip(row)
                    .map(|(&y, &z)| if y == 0.0 { 0.0 } else { y * (lse - z) })
                    .sum(),
            }
        })
        .collect();
    let mean = per_example.iter().sum::<f64>() / per_example.len() as f64;
    Ok(CrossEntropy { mean, per_example })
}

/// ∂/∂logits of `(1/n) Σ_i w_i · CE_i`; unit weights when `weights` is `None`.
pub fn cross_entropy_logit_grad(
    logits: &Tensor,
    targets: Targets<'_>,
    weights: Option<&[f64]>,
) -> Result<Tensor> {
    check_targets(logits, targets)?;
    let rows = logits.rows();
    if let Some(w) = weights {
        if w.len() != rows {
            return Err(Error::shape("per-example weights", rows, w.len()));
        }
    }
    let n = rows as f64;
    let mut grad = softmax(logits);
    for r in 0..rows {
        let scale = weights.map_or(1.0, |w| w[r]) / n;
        let row = grad.row_mut(r);
        match targets {
            Targets::Hard(idx) => row[idx[r]] -= 1.0,
            Targets::Soft(t) => {
                for (g, &y) in row.iter_mut().zip(t.row(r)) {
                    *g -= y;
                }
            }
        }
        for g in row.iter_mut() {
            *g *= scale;
        }
    }
    Ok(grad)
}

/// Analytic gradient of the (weighted) mean cross-entropy of `spec` on `batch`.
pub fn grad(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &Tensor,
    targets: Targets<'_>,
    weights: Option<&[f64]>,
) -> Result<ParamVector> {
    let trace = spec.trace(params, batch)?;
    let dz = cross_entropy_logit_grad(trace.output(), targets, weights)?;
    Ok(spec.backward(params, &trace, &dz)?.params)
}

/// Mean cross-entropy of the network output on a labeled batch.
pub fn mean_loss(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    let logits = spec.forward(params, batch)?;
    Ok(cross_entropy(&logits, Targets::Hard(labels))?.mean)
}
