//! Unrooted trees, the JC69 model, pruning likelihood, priors and the
//! annealed target density.

pub mod exact;
pub mod jc;
pub mod likelihood;
pub mod prior;
pub mod simulate;
pub mod topology;

pub use exact::exact_log_marginal_likelihood;
pub use likelihood::SitePatterns;
pub use prior::{AnnealedTarget, DEFAULT_PRIOR_RATE};
pub use topology::{log_unrooted_topology_count, unrooted_topology_count, TreeTopology};

/// Branch lengths in the edge order of one [`TreeTopology`].
#[derive(Debug, Clone, PartialEq)]
pub struct BranchLengths(Vec<f64>);

impl BranchLengths {
    pub fn new(values: Vec<f64>) -> Self {
        BranchLengths(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Reordered so that new entry `i` is old entry `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> BranchLengths {
        BranchLengths(perm.iter().map(|&i| self.0[i]).collect())
    }
}
