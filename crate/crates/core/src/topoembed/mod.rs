//! Topological node embeddings and the message-passing encoder.

mod dirichlet;
mod gnn;

pub use dirichlet::{dirichlet_embeddings, harmonic_residual};
pub use gnn::{BoundGnn, GnnConfig, GnnOutput, GnnParams};
