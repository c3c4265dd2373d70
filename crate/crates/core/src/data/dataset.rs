use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Labeled pool: `features` is `N × d`, one class index per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::shape("dataset features", "N × d", features.shape()));
        }
        if features.rows() != labels.len() {
            return Err(Error::shape("dataset labels", features.rows(), labels.len()));
        }
        if class_count < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least two classes, got {class_count}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::ClassIndex {
                index: bad,
                classes: class_count,
            });
        }
        if labels.len() < class_count {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} examples, fewer than its {class_count} classes",
                labels.len()
            )));
        }
        Ok(Dataset {
            features,
            labels,
            class_count,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Keeps the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "subset index {bad} out of range for {} examples",
                self.len()
            )));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.features.select_rows(indices), labels, self.class_count)
    }

    /// Per-class example indices, ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

/// Unlabeled class indices kept for diagnostics.
///
/// Only the `data` module can read them, so no training path observes the
/// labels of `D^u`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct HiddenLabels(Vec<usize>);

impl HiddenLabels {
    pub(in crate::data) fn get(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One client's private data: a small labeled set and a larger unlabeled set.
///
/// ```compile_fail
/// # fn peek(c: &feddure::data::ClientData) {
/// // hidden labels are not reachable from outside the data module
/// let _ = c.hidden_unlabeled_labels().get();
/// # }
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct ClientData {
    labeled_features: Tensor,
    labeled_labels: Vec<usize>,
    unlabeled_features: Option<Tensor>,
    hidden_unlabeled_labels: HiddenLabels,
    class_count: usize,
}

impl ClientData {
    pub(in crate::data) fn from_parts(
        labeled_features: Tensor,
        labeled_labels: Vec<usize>,
        unlabeled_features: Option<Tensor>,
        hidden: Vec<usize>,
        class_count: usize,
    ) -> Self {
        ClientData {
            labeled_features,
            labeled_labels,
            unlabeled_features,
            hidden_unlabeled_labels: HiddenLabels(hidden),
            class_count,
        }
    }

    /// Builds client data from explicit sets. `hidden` holds the true
    /// classes of the unlabeled rows and may be empty if unknown.
    pub fn new(
        labeled_features: Tensor,
        labeled_labels: Vec<usize>,
        class_count: usize,
        unlabeled: Option<Tensor>,
        hidden: Vec<usize>,
    ) -> Result<Self> {
        if labeled_features.rows() != labeled_labels.len() {
            return Err(Error::shape(
                "client labels",
                labeled_features.rows(),
                labeled_labels.len(),
            ));
        }
        if let Some(&bad) = labeled_labels.iter().chain(&hidden).find(|&&l| l >= class_count) {
            return Err(Error::ClassIndex {
                index: bad,
                classes: class_count,
            });
        }
        if let Some(u) = &unlabeled {
            if u.cols() != labeled_features.cols() {
                return Err(Error::shape(
                    "unlabeled features",
                    labeled_features.cols(),
                    u.cols(),
                ));
            }
            if !hidden.is_empty() && hidden.len() != u.rows() {
                return Err(Error::shape("hidden unlabeled labels", u.rows(), hidden.len()));
            }
        }
        Ok(ClientData::from_parts(
            labeled_features,
            labeled_labels,
            unlabeled,
            hidden,
            class_count,
        ))
    }

    pub fn labeled_features(&self) -> &Tensor {
        &self.labeled_features
    }

    pub fn labeled_labels(&self) -> &[usize] {
        &self.labeled_labels
    }

    pub fn labeled_len(&self) -> usize {
        self.labeled_labels.len()
    }

    /// `None` when the client holds no unlabeled examples.
    pub fn unlabeled_features(&self) -> Option<&Tensor> {
        self.unlabeled_features.as_ref()
    }

    pub fn unlabeled_len(&self) -> usize {
        self.unlabeled_features.as_ref().map_or(0, Tensor::rows)
    }

    pub fn len(&self) -> usize {
        self.labeled_len() + self.unlabeled_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn hidden_unlabeled_labels(&self) -> &HiddenLabels {
        &self.hidden_unlabeled_labels
    }
}
