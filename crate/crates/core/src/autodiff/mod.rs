//! Dense tensors and a reverse-mode tape.
//!
//! Every computation in the crate is expressed as [`Primitive`]s recorded on
//! a [`Graph`]. Leaves are created with [`Graph::param`] (trainable) or
//! [`Graph::constant`]; [`Graph::backward`] then fills in gradients for every
//! node downstream of a trainable leaf.
//!
//! The relu subgradient at exactly zero is taken as zero. Softmax and the
//! fused cross-entropy subtract the row max before exponentiating.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, SubgradientWarning};
pub use graph::{set_fault_flip_matmul_grad, Graph, Primitive, Var};
pub use tensor::Tensor;
