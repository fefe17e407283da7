//! Post-training evaluation: marginal likelihood, ELBO and LB-K, per-tree
//! gaps, ESS of the inner importance weights, and branch length divergences.

mod divergence;
mod ess;
mod gaps;

use rand::SeedableRng;
use serde::Serialize;

use crate::bounds::{estimate, BoundConfig, Objective, Variational};
use crate::error::{Error, Result};
use crate::phylo::{exact_log_marginal_likelihood, AnnealedTarget, BranchLengths, TreeTopology};
use crate::rng::{Purpose, StreamKey};
use crate::sibranch::{sample_mixing, MarginalMode};
use crate::tensor::logmeanexp;

pub use divergence::{branch_marginal_divergence, edge_divergences, Divergence, N_BINS};
pub use ess::{ess, ess_from_log_weights, ess_value};
pub use gaps::{per_tree_gaps, read_reference_marginals, tree_elbo, GapSettings, TreeGaps};

/// Mean and sample standard deviation of replicate estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Zero for a single replicate.
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn from_values(xs: &[f64]) -> Result<Summary> {
        if xs.is_empty() {
            return Err(Error::Empty("no replicates".into()));
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Summary { mean, sd, n })
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }
}

/// The bound a trained model is evaluated with: reverse-model weighting if it
/// has a reverse model, mixing draws otherwise.
pub fn eval_objective(model: &Variational) -> Objective {
    match (&model.reverse, model.branch.hidden_dim()) {
        (Some(_), _) => Objective::Miwlb,
        (None, 0) => Objective::Mlb,
        (None, _) => Objective::Msilb,
    }
}

pub fn marginal_mode(model: &Variational) -> MarginalMode<'_> {
    match &model.reverse {
        Some(r) => MarginalMode::Reverse(r),
        None => MarginalMode::Prior,
    }
}

// Disjoint step ranges so that the estimators never share draws.
const ELBO_STEPS: u64 = 0;
const ML_STEPS: u64 = 1 << 40;

/// Log of the mean importance weight `log (1/n) sum exp w_i`. Errors when
/// every weight is `-inf`.
pub fn log_ml_from_weights(log_weights: &[f64]) -> Result<f64> {
    if log_weights.is_empty() || log_weights.iter().all(|&w| w == f64::NEG_INFINITY) {
        return Err(Error::InvalidArgument("every importance weight is zero".into()));
    }
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(Error::NonFinite {
            iteration: 0,
            detail: "NaN importance weight".into(),
        });
    }
    Ok(logmeanexp(log_weights))
}

/// One marginal likelihood estimate from `n_samples` draws of the
/// variational distribution, each weighted by `P(Y, tau, q) / Q(tau) Q^(q|tau)`
/// with `Q^` a `j_eval`-draw marginal estimate.
pub fn estimate_ml(
    model: &Variational,
    target: &AnnealedTarget,
    n_samples: usize,
    j_eval: usize,
    seed: u64,
    rep: u64,
) -> Result<f64> {
    let cfg = BoundConfig {
        objective: eval_objective(model),
        k: n_samples,
        j: j_eval,
        lambda: 1.0,
    };
    let est = estimate(model, target, cfg, seed, ML_STEPS + rep, false)?;
    log_ml_from_weights(&est.log_weights)
}

pub fn estimate_ml_reps(
    model: &Variational,
    target: &AnnealedTarget,
    n_samples: usize,
    j_eval: usize,
    reps: usize,
    seed: u64,
) -> Result<Summary> {
    let v: Vec<f64> = (0..reps as u64)
        .map(|r| estimate_ml(model, target, n_samples, j_eval, seed, r))
        .collect::<Result<_>>()?;
    Summary::from_values(&v)
}

/// `reps` independent estimates of the `k`-particle bound at `lambda = 1`;
/// `k = 1` is the ELBO.
pub fn estimate_elbo_lbk(
    model: &Variational,
    target: &AnnealedTarget,
    k: usize,
    j_eval: usize,
    reps: usize,
    seed: u64,
) -> Result<Summary> {
    let cfg = BoundConfig {
        objective: eval_objective(model),
        k,
        j: j_eval,
        lambda: 1.0,
    };
    let v: Vec<f64> = (0..reps as u64)
        .map(|r| estimate(model, target, cfg, seed, ELBO_STEPS + r, false).map(|e| e.value))
        .collect::<Result<_>>()?;
    Summary::from_values(&v)
}

/// `log P(Y)` by summing the closed-form `log P(Y | tau)` over every
/// topology. Only feasible for a handful of taxa and sites.
pub fn exact_log_evidence(target: &AnnealedTarget) -> Result<f64> {
    let trees = TreeTopology::enumerate_all(target.n_taxa())?;
    let per_tree: Vec<f64> = trees
        .iter()
        .map(|t| exact_log_marginal_likelihood(target.patterns(), t, target.prior_rate()))
        .collect::<Result<_>>()?;
    // Uniform topology prior: the evidence is the plain mean.
    Ok(logmeanexp(&per_tree))
}

/// `n` draws `(tau, q)` from the variational distribution.
pub fn sample_variational(model: &Variational, n: usize, seed: u64) -> Result<Vec<(TreeTopology, BranchLengths)>> {
    let scorer = model.sbn.scorer();
    (0..n as u64)
        .map(|i| {
            let mut rng = StreamKey::new(seed, i, 0, Purpose::Evaluation).rng();
            let tree = scorer.sample(&mut rng);
            let z = sample_mixing(tree.n_edges(), model.branch.hidden_dim(), &mut rng);
            let (q, _) = model.branch.sample_branch(&tree, &z, &mut rng)?;
            Ok((tree, q))
        })
        .collect()
}

/// `n` branch length draws from `Q(q | tau)` on a fixed tree.
pub fn sample_on_tree(model: &Variational, tree: &TreeTopology, n: usize, seed: u64) -> Result<Vec<BranchLengths>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = sample_mixing(tree.n_edges(), model.branch.hidden_dim(), &mut rng);
            model.branch.sample_branch(tree, &z, &mut rng).map(|(q, _)| q)
        })
        .collect()
}

/// Everything `eval` reports for one checkpoint.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub objective: String,
    pub elbo: Summary,
    pub lb10: Summary,
    pub ml: Summary,
    pub ess: Option<Summary>,
    /// Closed-form `log P(Y)`, when requested on a tiny instance.
    pub exact_ml: Option<f64>,
}
