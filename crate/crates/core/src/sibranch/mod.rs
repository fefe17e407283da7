//! Semi-implicit branch length model: a lognormal conditional given per-edge
//! hidden variables, a standard normal mixing distribution, and a reverse
//! model over the hidden variables.

mod estimate;
mod model;
mod reverse;

pub use estimate::{reverse_log_density, reverse_sample, MarginalMode};
pub(crate) use estimate::check_reverse;
pub use model::{
    mixing_log_density, sample_mixing, BoundBranch, Encoded, ModelConfig, SiBranchModel, LOG_SIGMA_MAX,
    LOG_SIGMA_MIN,
};
pub(crate) use model::mixing_log_density_blocks;
pub use reverse::{BoundReverse, ReverseModel, ReverseParams};
