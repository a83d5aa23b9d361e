//! Dense tensors and the reverse-mode tape every model and loss is built on.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, DEFAULT_STEP};
pub use graph::{Gradients, Graph, Var, NORM_EPS, SIGMOID_CEIL, SIGMOID_FLOOR};
pub use tensor::Tensor2;
