//! Dense tensors with reverse-mode gradients and finite-difference checks.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::{eval_with_grad, eval_with_grad_relaxed, grad_check, GradReport, REL_FLOOR};
pub use graph::{Grads, Graph, Var};
pub use params::{Bound, ParamSet};
pub use tensor::{sigmoid, softplus, Tensor};
