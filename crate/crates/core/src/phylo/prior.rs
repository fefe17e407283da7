use super::likelihood::SitePatterns;
use super::topology::log_unrooted_topology_count;
use super::{BranchLengths, TreeTopology};
use crate::error::{Error, Result};
use crate::seqio::alignment::Alignment;

/// Rate of the i.i.d. exponential branch length prior.
pub const DEFAULT_PRIOR_RATE: f64 = 10.0;

/// `log P(tau, q)`: uniform over unrooted topologies times i.i.d.
/// `Exp(rate)` branch lengths. The topology term is `-log (2N-5)!!`.
pub fn log_prior(tree: &TreeTopology, q: &BranchLengths, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("prior rate {rate} must be positive")));
    }
    if q.len() != tree.n_edges() {
        return Err(Error::Dimension(format!(
            "{} branch lengths for {} edges",
            q.len(),
            tree.n_edges()
        )));
    }
    let mut branch = 0.0;
    for &t in q.values() {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidBranchLength(t));
        }
        branch += rate.ln() - rate * t;
    }
    Ok(branch - log_unrooted_topology_count(tree.n_leaves()))
}

/// Unnormalized annealed posterior `P(Y | tau, q)^lambda P(tau, q)`.
#[derive(Debug, Clone)]
pub struct AnnealedTarget {
    patterns: SitePatterns,
    prior_rate: f64,
}

impl AnnealedTarget {
    pub fn new(alignment: &Alignment) -> Result<Self> {
        Self::with_prior_rate(alignment, DEFAULT_PRIOR_RATE)
    }

    pub fn with_prior_rate(alignment: &Alignment, prior_rate: f64) -> Result<Self> {
        if alignment.n_taxa() < 3 {
            return Err(Error::TooFewTaxa(alignment.n_taxa()));
        }
        if !(prior_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prior rate {prior_rate} must be positive"
            )));
        }
        Ok(AnnealedTarget {
            patterns: SitePatterns::compress(alignment),
            prior_rate,
        })
    }

    pub fn patterns(&self) -> &SitePatterns {
        &self.patterns
    }

    pub fn prior_rate(&self) -> f64 {
        self.prior_rate
    }

    pub fn n_taxa(&self) -> usize {
        self.patterns.n_taxa()
    }

    pub fn log_likelihood(&self, tree: &TreeTopology, q: &BranchLengths) -> Result<f64> {
        self.patterns.log_likelihood(tree, q)
    }

    pub fn log_prior(&self, tree: &TreeTopology, q: &BranchLengths) -> Result<f64> {
        log_prior(tree, q, self.prior_rate)
    }

    /// Value and per-edge gradient of `lambda * log P(Y|tau,q) + log P(tau,q)`.
    pub fn log_density_grad(
        &self,
        tree: &TreeTopology,
        q: &BranchLengths,
        lambda: f64,
    ) -> Result<(f64, Vec<f64>)> {
        check_lambda(lambda)?;
        let (ll, g) = self.patterns.log_likelihood_grad(tree, q)?;
        let lp = self.log_prior(tree, q)?;
        let grad = g.iter().map(|&x| lambda * x - self.prior_rate).collect();
        Ok((lambda * ll + lp, grad))
    }
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "annealing power {lambda} must lie in (0, 1]"
        )));
    }
    Ok(())
}
