use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered, named collection of parameter tensors.
///
/// Binary operations require both operands to carry the same segment names
/// and shapes in the same order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    segments: Vec<Segment>,
}

impl ParamVector {
    pub fn new(segments: Vec<Segment>) -> Self {
        ParamVector { segments }
    }

    pub fn from_named(parts: Vec<(String, Tensor)>) -> Self {
        ParamVector {
            segments: parts
                .into_iter()
                .map(|(name, tensor)| Segment { name, tensor })
                .collect(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Tensor> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.tensor)
    }

    /// Total number of scalar coordinates.
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.tensor.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> ParamVector {
        ParamVector {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    name: s.name.clone(),
                    tensor: Tensor::zeros(s.tensor.shape().to_vec()),
                })
                .collect(),
        }
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if self.segments.len() != other.segments.len() {
            return Err(Error::shape(
                "parameter segment count",
                self.segments.len(),
                other.segments.len(),
            ));
        }
        for (a, b) in self.segments.iter().zip(&other.segments) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::shape(
                    format!("parameter segment `{}`", a.name),
                    (a.name.as_str(), a.tensor.shape()),
                    (b.name.as_str(), b.tensor.shape()),
                ));
            }
        }
        Ok(())
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        self.check_compatible(other)?;
        let segments = self
            .segments
            .iter()
            .zip(&other.segments)
            .map(|(a, b)| {
                let values = a
                    .tensor
                    .values()
                    .iter()
                    .zip(b.tensor.values())
                    .map(|(&x, &y)| f(x, y))
                    .collect();
                Segment {
                    name: a.name.clone(),
                    tensor: Tensor::from_parts(a.tensor.shape().to_vec(), values),
                }
            })
            .collect();
        Ok(ParamVector { segments })
    }

    /// `self + scale · other`, elementwise.
    pub fn axpy(&self, scale: f64, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a + scale * b)
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> ParamVector {
        self.map(|v| s * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamVector {
        ParamVector {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    name: s.name.clone(),
                    tensor: s.tensor.map(&f),
                })
                .collect(),
        }
    }

    pub(crate) fn zip_map_checked(
        &self,
        other: &ParamVector,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<ParamVector> {
        self.zip_map(other, f)
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.iter().zip(other.iter()).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.segments.iter().all(|s| s.tensor.is_finite())
    }

    /// Iterates every coordinate in segment order.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments
            .iter()
            .flat_map(|s| s.tensor.values().iter().copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// Builds a vector with `self`'s layout from flat values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ParamVector> {
        if flat.len() != self.len() {
            return Err(Error::shape("flat parameter length", self.len(), flat.len()));
        }
        let mut offset = 0;
        let segments = self
            .segments
            .iter()
            .map(|s| {
                let n = s.tensor.len();
                let tensor =
                    Tensor::from_parts(s.tensor.shape().to_vec(), flat[offset..offset + n].to_vec());
                offset += n;
                Segment {
                    name: s.name.clone(),
                    tensor,
                }
            })
            .collect();
        Ok(ParamVector { segments })
    }

    /// Maps a flat coordinate to `(segment index, offset within segment)`.
    pub fn locate(&self, coordinate: usize) -> Option<(usize, usize)> {
        let mut rest = coordinate;
        for (i, s) in self.segments.iter().enumerate() {
            if rest < s.tensor.len() {
                return Some((i, rest));
            }
            rest -= s.tensor.len();
        }
        None
    }

    pub(crate) fn coord_mut(&mut self, segment: usize, offset: usize) -> &mut f64 {
        &mut self.segments[segment].tensor.values_mut()[offset]
    }

    pub(crate) fn segment_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.segments[index].tensor
    }
}
