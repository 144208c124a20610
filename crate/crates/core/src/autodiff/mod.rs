//! Dense tensors and reverse-mode automatic differentiation.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, grad_check_coords_with_floor, GradCheckReport};
pub use graph::{gemm, BatchStats, Graph, Mode, Var, BN_EPS};
pub use tensor::Tensor;
