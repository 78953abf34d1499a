//! Dense `f64` tensors and a reverse-mode differentiation engine that can
//! differentiate through its own gradient steps.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::grad_check_fd;
pub use graph::{Graph, GraphNode, NodeId, Op};
pub use tensor::Tensor;
