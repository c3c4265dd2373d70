//! Federated semi-supervised learning simulator with dual regulators.
//!
//! Each client trains its local model on a few labeled and many unlabeled
//! examples. A coarse-grained regulator (C-reg) turns the effect of a
//! pseudo-label update on labeled loss into a scalar reward, and a
//! fine-grained regulator (F-reg) learns a weight per unlabeled example
//! through a one-step bi-level update. The server aggregates local models
//! with FedAvg.
//!
//! Module map:
//! - [`numerics`]: tensors, MLPs with analytic gradients, optimizers, gradient oracle
//! - [`data`]: IDX loading, synthetic blobs, Dirichlet partitioning, augmentation
//! - [`regulators`]: pseudo-labels, C-reg/F-reg updates, reward, instance weights
//! - [`client`]: local rounds for FedDure and the two baselines
//! - [`server`]: selection, aggregation, evaluation, rounds, checkpoints
//! - [`harness`]: configuration, experiments, metrics, presets

pub mod client;
pub mod data;
mod error;
pub mod harness;
pub mod numerics;
pub mod regulators;
pub mod rng;
pub mod server;

pub use error::{Error, Result};
