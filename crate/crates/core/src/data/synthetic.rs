use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::SimRng;

/// Class centres with unit margin: every centre lies one unit from the
/// perpendicular bisector to its nearest neighbour (neighbour distance 2).
///
/// With `dim ≥ classes` the centres are `√2 · e_c`; otherwise they sit on
/// a circle in the first two coordinates (or on a line when `dim = 1`).
pub fn class_means(classes: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if dim >= classes {
                m[c] = std::f64::consts::SQRT_2;
            } else if dim == 1 {
                m[0] = 2.0 * c as f64 - (classes - 1) as f64;
            } else {
                let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
                let radius = 1.0 / (std::f64::consts::PI / classes as f64).sin();
                m[0] = radius * angle.cos();
                m[1] = radius * angle.sin();
            }
            m
        })
        .collect()
}

/// Isotropic Gaussian blobs, `per_class` points for each of `classes`
/// centres, standard deviation `spread`. Rows are grouped by class.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    rng: &mut SimRng,
) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs ≥ 2 classes, ≥ 1 point per class and dim ≥ 1 (got {classes}, {per_class}, {dim})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread must be finite and non-negative, got {spread}"
        )));
    }
    let means = class_means(classes, dim);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut values = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                let z: f64 = if spread > 0.0 { noise.sample(rng) } else { 0.0 };
                values.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(
        Tensor::matrix(classes * per_class, dim, values)?,
        labels,
        classes,
    )
}
