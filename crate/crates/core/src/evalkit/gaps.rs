use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::{eval_objective, Summary};
use crate::bounds::{estimate_on_tree, BoundConfig, Variational};
use crate::error::{Error, Result};
use crate::phylo::{AnnealedTarget, TreeTopology};
use crate::sbn::SbnSupport;
use crate::seqio::Alignment;
use crate::trainer::{TrainConfig, Trainer};

/// How the per-tree reference model is trained and how ELBOs are estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSettings {
    /// Training of the per-tree model (`J = 50` by default).
    pub train: TrainConfig,
    /// Branch length draws per ELBO estimate.
    pub n_eval: usize,
    pub j_eval: usize,
    pub seed: u64,
}

impl Default for GapSettings {
    fn default() -> Self {
        GapSettings {
            train: TrainConfig::default(),
            n_eval: 1000,
            j_eval: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TreeGaps {
    pub log_ml: f64,
    pub elbo: f64,
    pub best_elbo: f64,
    /// `log P(Y | tau) - best ELBO`.
    pub approximation_gap: f64,
    /// `best ELBO - ELBO`.
    pub amortization_gap: f64,
    /// Sum of the two gaps.
    pub inference_gap: f64,
}

/// `L(Q | tau) = E[log P(Y, q | tau) - log Q^(q | tau)]` from `n` draws.
pub fn tree_elbo(
    model: &Variational,
    target: &AnnealedTarget,
    tree: &TreeTopology,
    n: usize,
    j_eval: usize,
    seed: u64,
) -> Result<Summary> {
    let cfg = BoundConfig {
        objective: eval_objective(model),
        k: n,
        j: j_eval,
        lambda: 1.0,
    };
    let est = estimate_on_tree(model, target, cfg, tree, seed, 0, false)?;
    Summary::from_values(&est.log_weights)
}

/// Approximation and amortization gaps of an amortized model on one tree,
/// against a freshly trained model for that tree alone.
pub fn per_tree_gaps(
    model: &Variational,
    alignment: &Alignment,
    tree: &TreeTopology,
    reference: Option<f64>,
    settings: &GapSettings,
) -> Result<TreeGaps> {
    let log_ml = reference.ok_or_else(|| Error::InvalidArgument("no reference log marginal likelihood for this tree".into()))?;
    let taxa = model.sbn.support().taxa().clone();
    let aligned = alignment.reordered(taxa.names())?;
    let target = AnnealedTarget::new(&aligned)?;
    let elbo = tree_elbo(model, &target, tree, settings.n_eval, settings.j_eval, settings.seed)?.mean;

    let support = SbnSupport::from_trees(taxa, std::slice::from_ref(tree))?;
    let mut fresh = Trainer::new(settings.train, &aligned, support)?.on_tree(tree.clone())?;
    fresh.train()?;
    let best = fresh.into_model();
    let best_elbo = tree_elbo(&best, &target, tree, settings.n_eval, settings.j_eval, settings.seed)?.mean;

    let approximation_gap = log_ml - best_elbo;
    let amortization_gap = best_elbo - elbo;
    Ok(TreeGaps {
        log_ml,
        elbo,
        best_elbo,
        approximation_gap,
        amortization_gap,
        inference_gap: approximation_gap + amortization_gap,
    })
}

/// Reference values from a CSV with columns `tree_id,logml`.
pub fn read_reference_marginals(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("{}: missing column `{name}`", path.display())))
    };
    let (id, val) = (col("tree_id")?, col("logml")?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let v: f64 = rec[val]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad logml `{}`", &rec[val])))?;
        out.insert(rec[id].trim().to_string(), v);
    }
    Ok(out)
}
