//! Static-graph reverse-mode differentiation over 2-D tensors.

mod backprop;
mod eval;
mod graph;
mod tensor;

pub use backprop::{gradient, hvp, HvpGraph};
pub use eval::{eval, Workspace};
pub use graph::{Graph, Node, NodeId, Op};
pub use tensor::Tensor;
