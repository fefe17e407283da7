use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Summary;
use crate::error::{Error, Result};
use crate::phylo::{BranchLengths, TreeTopology};
use crate::sibranch::{sample_mixing, MarginalMode, SiBranchModel};

/// `1 / sum_j w_j^2` for self-normalized weights, clipped to `[1, J]`
/// against rounding.
pub fn ess_from_log_weights(log_w: &[f64]) -> Result<f64> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if log_w.is_empty() || !m.is_finite() {
        return Err(Error::InvalidArgument("ESS needs at least one finite weight".into()));
    }
    let w: Vec<f64> = log_w.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| (x / s) * (x / s)).sum();
    Ok((1.0 / s2).clamp(1.0, log_w.len() as f64))
}

/// ESS of the `J` inner weights behind the marginal estimate at one `(tau, q)`.
pub fn ess_value<R: rand::Rng + ?Sized>(
    branch: &SiBranchModel,
    mode: MarginalMode<'_>,
    tree: &TreeTopology,
    q: &BranchLengths,
    j: usize,
    rng: &mut R,
) -> Result<f64> {
    if j == 0 {
        return Err(Error::InvalidArgument("ESS needs J >= 1".into()));
    }
    let draws = sample_mixing(j * tree.n_edges(), branch.hidden_dim(), rng);
    ess_from_log_weights(&branch.marginal_log_terms(mode, tree, q, &draws)?)
}

/// Mean ESS over a set of `(tau, q)`, with its spread across the set.
pub fn ess(
    branch: &SiBranchModel,
    mode: MarginalMode<'_>,
    samples: &[(TreeTopology, BranchLengths)],
    j: usize,
    seed: u64,
) -> Result<Summary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = samples
        .iter()
        .map(|(t, q)| ess_value(branch, mode, t, q, j, &mut rng))
        .collect::<Result<_>>()?;
    Summary::from_values(&v)
}
