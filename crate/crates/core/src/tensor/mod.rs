//! Dense double-precision arrays, reverse-mode differentiation and MLPs.

mod array;
mod graph;
mod mlp;

pub use array::Tensor;
pub use graph::{elu, logmeanexp, logsumexp, Gradients, Graph, Var};
pub use mlp::{BoundMlp, Linear, Mlp};
