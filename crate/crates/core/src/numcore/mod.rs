//! Dense linear algebra, differentiable primitives, Adam, and gradient checking.

mod adam;
mod ddouble;
mod gradcheck;
mod lstm;
mod matrix;
mod ops;
mod param;

pub use adam::{adam_step, AdamState};
pub use ddouble::{DoubleDouble, Scalar};
pub use gradcheck::{grad_check, relative_error, Differentiable, GradCheckReport, ParamCheck};
pub use lstm::{lstm_cell, lstm_cell_backward, LstmCache, LstmInputGrads, LstmWeights};
pub use matrix::{dot, sigmoid, Matrix};
pub use ops::{cross_entropy, dropout_mask, log_softmax, softmax};
pub use param::{clip_grad_norm, grad_norm, tensors, OwnedParam, ParamTensor};
