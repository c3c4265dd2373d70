//! Datasets, client partitions, and augmentation.

mod augment;
mod dataset;
pub mod idx;
mod imbalance;
mod partition;
mod synthetic;

pub use augment::{augment, AugmentSpec, Strength};
pub use dataset::{ClientData, Dataset, HiddenLabels};
pub use idx::load_idx;
pub use imbalance::{class_histogram, imbalance_report, total_variation, ClientImbalance, ImbalanceReport};
pub use partition::{
    dirichlet, dirichlet_partition, largest_remainder, ClientAssignment, Partition,
    PartitionManifest, PartitionSpec, Setting,
};
pub use synthetic::{class_means, gen_synthetic};
