//! Variational Bayesian phylogenetics with semi-implicit branch length
//! distributions.

pub mod bounds;
pub mod error;
pub mod evalkit;
pub mod phylo;
pub mod rng;
pub mod sbn;
pub mod seqio;
pub mod sibranch;
pub mod tensor;
pub mod topoembed;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use bounds::{Objective, Variational};
pub use error::{Error, Result};
pub use phylo::{AnnealedTarget, BranchLengths, SitePatterns, TreeTopology};
pub use sbn::{SbnModel, SbnSupport};
pub use seqio::{Alignment, AlignmentFormat, TaxonSet};
pub use sibranch::ModelConfig;
pub use trainer::{TrainConfig, Trainer};
