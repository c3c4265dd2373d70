//! Dense tensors, feed-forward networks with analytic backpropagation,
//! optimizers, and a finite-difference gradient oracle.
//!
//! All operations are pure functions of their inputs. Everything is `f64`.

mod gradcheck;
mod loss;
mod mlp;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{check_gradient, numeric_grad, GradOracleReport, RELATIVE_ERROR_FLOOR};
pub use loss::{
    argmax, cross_entropy, cross_entropy_logit_grad, grad, mean_loss, softmax, CrossEntropy,
    Targets,
};
pub use mlp::{Activation, Backward, MlpSpec, Trace};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState, Optimizer, OptimizerKind};
pub use params::{ParamVector, Segment};
pub use tensor::Tensor;

pub(crate) use mlp::{backward as backward_widths, init_params as init_widths, trace as trace_widths};
pub(crate) use mlp::{check_params as check_widths, zero_params as zero_widths};
