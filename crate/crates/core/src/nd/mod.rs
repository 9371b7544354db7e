//! Dense 2-D tensors with a reverse-mode tape, the handful of layers the
//! policy needs, finite-difference gradient checking, and Adam.

mod adam;
mod gradcheck;
pub mod layers;
mod param;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{grad_check, grad_check_report, relative_error, GradCheckReport, Stencil, GRAD_CHECK_FLOOR};
pub use param::{Checkpoint, ParamId, ParamStore, Parameter, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tape::{softmax_values, Gradients, Tape, Var, LAYER_NORM_EPS, MASK_SENTINEL};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[cfg(test)]
mod tests;
