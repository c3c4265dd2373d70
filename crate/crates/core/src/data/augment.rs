use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Weak and strong perturbations applied to unlabeled features.
///
/// With `image_mode`, rows whose width is a perfect square are treated as
/// square single-channel images; weak adds a random flip and a shift of up
/// to two pixels, strong adds a square cutout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAugmentSpec")]
pub struct AugmentSpec {
    weak_noise_sigma: f64,
    strong_noise_sigma: f64,
    strong_dropout_prob: f64,
    image_mode: bool,
}

#[derive(Deserialize)]
struct RawAugmentSpec {
    weak_noise_sigma: f64,
    strong_noise_sigma: f64,
    strong_dropout_prob: f64,
    image_mode: bool,
}

impl TryFrom<RawAugmentSpec> for AugmentSpec {
    type Error = Error;

    fn try_from(r: RawAugmentSpec) -> Result<Self> {
        AugmentSpec::new(
            r.weak_noise_sigma,
            r.strong_noise_sigma,
            r.strong_dropout_prob,
            r.image_mode,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strength {
    Weak,
    Strong,
}

const SHIFT_PIXELS: i64 = 2;

impl AugmentSpec {
    pub fn new(
        weak_noise_sigma: f64,
        strong_noise_sigma: f64,
        strong_dropout_prob: f64,
        image_mode: bool,
    ) -> Result<Self> {
        let finite = weak_noise_sigma.is_finite() && strong_noise_sigma.is_finite();
        if !finite || weak_noise_sigma < 0.0 || strong_noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "augmentation sigmas must be finite and non-negative (weak {weak_noise_sigma}, strong {strong_noise_sigma})"
            )));
        }
        if weak_noise_sigma > strong_noise_sigma {
            return Err(Error::InvalidArgument(format!(
                "weak noise {weak_noise_sigma} exceeds strong noise {strong_noise_sigma}"
            )));
        }
        if !(0.0..1.0).contains(&strong_dropout_prob) {
            return Err(Error::InvalidArgument(format!(
                "strong dropout probability must lie in [0, 1), got {strong_dropout_prob}"
            )));
        }
        Ok(AugmentSpec {
            weak_noise_sigma,
            strong_noise_sigma,
            strong_dropout_prob,
            image_mode,
        })
    }

    pub fn identity() -> Self {
        AugmentSpec::new(0.0, 0.0, 0.0, false).unwrap()
    }

    pub fn weak_noise_sigma(&self) -> f64 {
        self.weak_noise_sigma
    }

    pub fn strong_noise_sigma(&self) -> f64 {
        self.strong_noise_sigma
    }

    pub fn strong_dropout_prob(&self) -> f64 {
        self.strong_dropout_prob
    }

    pub fn image_mode(&self) -> bool {
        self.image_mode
    }
}

fn square_side(width: usize) -> Option<usize> {
    let side = (width as f64).sqrt().round() as usize;
    (side * side == width && side > 1).then_some(side)
}

fn flip_horizontal(row: &mut [f64], side: usize) {
    for line in row.chunks_exact_mut(side) {
        line.reverse();
    }
}

fn shift(row: &mut [f64], side: usize, dy: i64, dx: i64) {
    let src = row.to_vec();
    let s = side as i64;
    for y in 0..s {
        for x in 0..s {
            let (sy, sx) = (y - dy, x - dx);
            row[(y * s + x) as usize] = if (0..s).contains(&sy) && (0..s).contains(&sx) {
                src[(sy * s + sx) as usize]
            } else {
                0.0
            };
        }
    }
}

fn cutout<R: Rng + ?Sized>(row: &mut [f64], side: usize, rng: &mut R) {
    let size = (side / 4).max(1);
    let cy = rng.random_range(0..side);
    let cx = rng.random_range(0..side);
    let (y0, x0) = (cy.saturating_sub(size / 2), cx.saturating_sub(size / 2));
    for y in y0..(y0 + size).min(side) {
        for x in x0..(x0 + size).min(side) {
            row[y * side + x] = 0.0;
        }
    }
}

/// Augments every row of `features`. Output shape equals input shape.
///
/// Weak: (image mode: flip, shift) then additive `N(0, σ_w²)` noise drawn in
/// row-major order. Strong: additive `N(0, σ_s²)` noise, independent
/// coordinate dropout with probability `p`, then (image mode) one cutout.
pub fn augment<R: Rng + ?Sized>(
    features: &Tensor,
    spec: &AugmentSpec,
    strength: Strength,
    rng: &mut R,
) -> Tensor {
    let mut out = features.clone();
    let side = if spec.image_mode {
        square_side(features.cols())
    } else {
        None
    };
    let sigma = match strength {
        Strength::Weak => spec.weak_noise_sigma,
        Strength::Strong => spec.strong_noise_sigma,
    };
    let noise = Normal::new(0.0, 1.0).unwrap();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        if let (Strength::Weak, Some(side)) = (strength, side) {
            if rng.random_bool(0.5) {
                flip_horizontal(row, side);
            }
            let dy = rng.random_range(-SHIFT_PIXELS..=SHIFT_PIXELS);
            let dx = rng.random_range(-SHIFT_PIXELS..=SHIFT_PIXELS);
            shift(row, side, dy, dx);
        }
        if sigma > 0.0 {
            for v in row.iter_mut() {
                let z: f64 = noise.sample(rng);
                *v += sigma * z;
            }
        }
        if strength == Strength::Strong {
            if spec.strong_dropout_prob > 0.0 {
                for v in row.iter_mut() {
                    if rng.random_bool(spec.strong_dropout_prob) {
                        *v = 0.0;
                    }
                }
            }
            if let Some(side) = side {
                cutout(row, side, rng);
            }
        }
    }
    out
}
