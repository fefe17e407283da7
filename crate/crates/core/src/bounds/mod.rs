//! Multi-sample lower bounds (MLB, MSILB, MIWLB) with their gradients.

mod vimco;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phylo::{log_unrooted_topology_count, AnnealedTarget, BranchLengths, TreeTopology};
use crate::rng::{ParticleStreams, Purpose, StreamKey};
use crate::sbn::{SbnModel, SbnScorer, SbnSupport};
use crate::sibranch::{
    check_reverse, mixing_log_density_blocks, sample_mixing, ModelConfig, ReverseModel, SiBranchModel,
};
use crate::tensor::{logmeanexp, logsumexp, Graph, Tensor};

pub use vimco::{grad_topology_vimco, vimco_signals};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_J: usize = 50;
pub const DEFAULT_ANNEAL_HORIZON: u64 = 100_000;

/// `min(1, 0.001 + i / 100000)`.
pub fn annealing_schedule(i: u64) -> f64 {
    annealing_schedule_with(i, DEFAULT_ANNEAL_HORIZON)
}

/// `min(1, 0.001 + i / horizon)`, evaluated as one correctly rounded
/// division so that round values come out exact.
pub fn annealing_schedule_with(i: u64, horizon: u64) -> f64 {
    let h = horizon.max(1) as f64;
    ((h / 1000.0 + i as f64) / h).min(1.0)
}

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    /// Plain multi-sample bound; needs a conditional that ignores `z`
    /// (the diagonal lognormal baseline).
    Mlb,
    Msilb,
    Miwlb,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Mlb => "baseline",
            Objective::Msilb => "msilb",
            Objective::Miwlb => "miwlb",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "mlb" => Ok(Objective::Mlb),
            "msilb" => Ok(Objective::Msilb),
            "miwlb" => Ok(Objective::Miwlb),
            other => Err(Error::InvalidArgument(format!(
                "unknown objective `{other}` (expected msilb, miwlb or baseline)"
            ))),
        }
    }
}

/// Topology model, branch model and (for MIWLB) reverse model.
#[derive(Debug, Clone, PartialEq)]
pub struct Variational {
    pub sbn: SbnModel,
    pub branch: SiBranchModel,
    pub reverse: Option<ReverseModel>,
}

impl Variational {
    /// Fresh parameters for an objective. The baseline drops the hidden
    /// variables; only MIWLB carries a reverse model.
    pub fn init(support: SbnSupport, objective: Objective, mut config: ModelConfig, seed: u64) -> Self {
        if objective == Objective::Mlb {
            config.hidden_dim = 0;
        }
        let n = support.n_taxa();
        let mut rng = StreamKey::new(seed, 0, 0, Purpose::Init).rng();
        let branch = SiBranchModel::new(n, config, &mut rng);
        let reverse = (objective == Objective::Miwlb).then(|| ReverseModel::new(config, &mut rng));
        Variational {
            sbn: SbnModel::new(support),
            branch,
            reverse,
        }
    }

    pub fn n_taxa(&self) -> usize {
        self.sbn.support().n_taxa()
    }
}

/// Step-level settings of one bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    pub objective: Objective,
    pub k: usize,
    pub j: usize,
    pub lambda: f64,
}

/// Sampled quantities of one particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub tree: TreeTopology,
    /// Hidden variables that generated `q`, n_edges x H.
    pub z0: Tensor,
    pub q: BranchLengths,
    /// `lambda * log P(Y | tau, q) + log P(tau, q)`.
    pub log_target: f64,
    pub log_q_tree: f64,
    /// Inner estimate of `log Q(q | tau)`.
    pub log_q_branch: f64,
    pub log_weight: f64,
}

/// Gradients of a bound with respect to every parameter group, laid out like
/// the models' `tensors()` (the SBN as one flat vector).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub sbn: Vec<f64>,
    pub branch: Vec<Tensor>,
    pub reverse: Vec<Tensor>,
    /// Doubly reparameterized estimate of the reverse-model gradient. Same
    /// expectation as `reverse`, far lower variance for moderate J; this is
    /// what training uses. Empty unless the objective is MIWLB.
    pub reverse_dr: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundEstimate {
    pub config: BoundConfig,
    /// `logsumexp(f) - log K`.
    pub value: f64,
    pub log_weights: Vec<f64>,
    pub particles: Vec<Particle>,
    pub grads: Option<ModelGradients>,
}

/// `log (1/K) sum_k exp f_k` over a sorted copy, so that the result does not
/// depend on particle order.
pub fn multi_sample_bound(log_weights: &[f64]) -> f64 {
    let mut f = log_weights.to_vec();
    f.sort_by(f64::total_cmp);
    logmeanexp(&f)
}

struct ParticleOut {
    particle: Particle,
    branch: Vec<Tensor>,
    reverse: Vec<Tensor>,
    // Pieces of the doubly reparameterized reverse gradient, see `estimate_impl`.
    rev_path: Vec<Tensor>,
    rev_anchor: Vec<Tensor>,
    score: Vec<f64>,
}

fn validate(model: &Variational, target: &AnnealedTarget, cfg: &BoundConfig) -> Result<()> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda <= 1.0) {
        return Err(Error::InvalidArgument(format!("annealing power {} must lie in (0, 1]", cfg.lambda)));
    }
    if target.n_taxa() != model.n_taxa() || model.branch.n_taxa() != model.n_taxa() {
        return Err(Error::TaxonMismatch(format!(
            "alignment has {} taxa, model {}",
            target.n_taxa(),
            model.n_taxa()
        )));
    }
    match cfg.objective {
        Objective::Mlb if !model.branch.is_z_independent() => Err(Error::InvalidArgument(
            "the plain multi-sample bound needs a branch model that ignores its hidden variables".into(),
        )),
        Objective::Miwlb => match &model.reverse {
            Some(rev) => check_reverse(&model.branch, rev),
            None => Err(Error::InvalidArgument("MIWLB needs a reverse model".into())),
        },
        _ => Ok(()),
    }
}

fn zeros_like(ts: &[Tensor]) -> Vec<Tensor> {
    ts.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
}

fn normals(n: usize, rng: &mut crate::rng::StreamRng) -> Vec<f64> {
    use rand::Rng;
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// Everything one particle contributes. Draws come from the particle's own
/// streams: topology, anchor `z^0`, branch noise, then the `J` extra hidden
/// variables (mixing draws for MSILB, reverse-model noise for MIWLB).
fn run_particle(
    model: &Variational,
    scorer: &SbnScorer<'_>,
    target: &AnnealedTarget,
    cfg: &BoundConfig,
    fixed: Option<&TreeTopology>,
    streams: ParticleStreams,
    with_grad: bool,
) -> Result<ParticleOut> {
    let tree = match fixed {
        Some(t) => t.clone(),
        None => scorer.sample(&mut streams.rng(Purpose::Topology)),
    };
    let e = tree.n_edges();
    let h = model.branch.hidden_dim();
    let z0 = sample_mixing(e, h, &mut streams.rng(Purpose::MixingAnchor));
    let eps = normals(e, &mut streams.rng(Purpose::BranchNoise));

    let mut g = Graph::new();
    let b = model.branch.bind(&mut g, with_grad);
    let enc = b.encode(&mut g, &tree)?;
    let z0v = g.constant(z0.clone());
    let lq = b.sample_log_q(&mut g, &enc, z0v, &eps)?;
    let qv = g.exp(lq);
    let q = BranchLengths::new(g.value(qv).data().to_vec());
    if let Some(bad) = q.values().iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::NonFinite {
            iteration: streams.step as usize,
            detail: format!(
                "particle {}: branch length {} on edge {bad} (log q {:?}), edges {:?}",
                streams.particle,
                q.values()[bad],
                g.value(lq).data(),
                tree.edges()
            ),
        });
    }
    let (log_target, dq) = target.log_density_grad(&tree, &q, cfg.lambda)?;
    // Chain rule to log q.
    let dlq: Vec<f64> = dq.iter().zip(q.values()).map(|(d, x)| d * x).collect();
    let target_node = g.custom_scalar(lq, log_target, Tensor::column(dlq));

    let mut bound_rev = None;
    let mut dr_nodes = None;
    let terms = match cfg.objective {
        Objective::Mlb => b.log_density_blocks(&mut g, &enc, z0v, lq)?,
        Objective::Msilb => {
            let extra = sample_mixing(cfg.j * e, h, &mut streams.rng(Purpose::ExtraHidden));
            let ev = g.constant(extra);
            let z = g.concat_rows(&[z0v, ev])?;
            b.log_density_blocks(&mut g, &enc, z, lq)?
        }
        Objective::Miwlb => {
            let rev = model.reverse.as_ref().expect("validated");
            let r = rev.bind(&mut g, with_grad);
            let p = r.params(&mut g, &enc, lq)?;
            let noise = sample_mixing(cfg.j * e, h, &mut streams.rng(Purpose::ExtraHidden));
            let zr = r.sample(&mut g, &p, noise)?;
            let z = g.concat_rows(&[z0v, zr])?;
            let cond = b.log_density_blocks(&mut g, &enc, z, lq)?;
            let mix = mixing_log_density_blocks(&mut g, z, cfg.j + 1)?;
            let rd = r.log_density_blocks(&mut g, &p, z)?;
            let ratio = g.sub(mix, rd)?;
            dr_nodes = Some((cond, mix, p, zr));
            bound_rev = Some(r);
            g.add(cond, ratio)?
        }
    };
    let inner = g.logmeanexp(terms);
    // On a fixed tree the topology prior stands in for log Q(tau), which
    // leaves the conditional bound on log P(Y, q | tau).
    let (log_q_tree, score) = if fixed.is_some() {
        (-log_unrooted_topology_count(tree.n_leaves()), Vec::new())
    } else if with_grad {
        scorer.log_prob_unrooted_grad(&tree)?
    } else {
        (scorer.log_prob_unrooted(&tree)?, Vec::new())
    };
    let f = g.sub(target_node, inner)?;
    let f = g.add_scalar(f, -log_q_tree);
    let log_weight = g.value(f).item();
    let log_q_branch = g.value(inner).item();
    let (mut branch, mut reverse, mut rev_path, mut rev_anchor) = Default::default();
    if with_grad && log_weight.is_finite() {
        let grads = g.backward(f)?;
        branch = b.grads(&g, &grads);
        if let (Some(r), Some((cond, mix, p, zr))) = (bound_rev, dr_nodes) {
            reverse = r.grads(&g, &grads);
            // Normalized inner weights w_j.
            let t = g.value(terms).data().to_vec();
            let lse = logsumexp(&t);
            let w: Vec<f64> = t.iter().map(|x| (x - lse).exp()).collect();
            let j = cfg.j;
            rev_path = if j == 0 {
                reverse.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
            } else {
                // sum_j w_j^2 d log w_j / dz_j . dz_j / dxi, with R's density
                // parameters held fixed.
                let c = g.slice_rows(cond, 1, j)?;
                let m = g.slice_rows(mix, 1, j)?;
                let held = p.detached(&mut g);
                let rd = r.log_density_blocks(&mut g, &held, zr)?;
                let lw = g.add(c, m)?;
                let lw = g.sub(lw, rd)?;
                let seed = Tensor::column(w[1..].iter().map(|x| x * x).collect());
                r.grads(&g, &g.backward_with(lw, seed)?)
            };
            // w_0 d log R(z0) / dxi: the anchor is a draw from the posterior
            // over z, so this term pulls R towards it.
            let r0 = r.log_density_blocks(&mut g, &p, z0v)?;
            rev_anchor = r.grads(&g, &g.backward_with(r0, Tensor::column(vec![w[0]]))?);
        }
    }
    Ok(ParticleOut {
        particle: Particle {
            tree,
            z0,
            q,
            log_target,
            log_q_tree,
            log_q_branch,
            log_weight,
        },
        branch,
        reverse,
        rev_path,
        rev_anchor,
        score,
    })
}

/// Evaluates the bound for one step. Particle `k` uses the streams
/// `(seed, step, k)`; gradients, if requested, are those of the returned
/// value (VIMCO for the topology logits, which needs `K >= 2`).
pub fn estimate(
    model: &Variational,
    target: &AnnealedTarget,
    cfg: BoundConfig,
    seed: u64,
    step: u64,
    with_grad: bool,
) -> Result<BoundEstimate> {
    estimate_impl(model, target, cfg, None, seed, step, with_grad)
}

/// The bound restricted to one topology: `f_k = log P(Y, q^k | tau) -
/// log Q(q^k | tau)`. The topology model is not used and gets a zero gradient.
pub fn estimate_on_tree(
    model: &Variational,
    target: &AnnealedTarget,
    cfg: BoundConfig,
    tree: &TreeTopology,
    seed: u64,
    step: u64,
    with_grad: bool,
) -> Result<BoundEstimate> {
    if tree.n_leaves() != model.n_taxa() {
        return Err(Error::TaxonMismatch(format!(
            "tree has {} leaves, model {}",
            tree.n_leaves(),
            model.n_taxa()
        )));
    }
    estimate_impl(model, target, cfg, Some(tree), seed, step, with_grad)
}

fn estimate_impl(
    model: &Variational,
    target: &AnnealedTarget,
    cfg: BoundConfig,
    fixed: Option<&TreeTopology>,
    seed: u64,
    step: u64,
    with_grad: bool,
) -> Result<BoundEstimate> {
    validate(model, target, &cfg)?;
    if with_grad && cfg.k < 2 && fixed.is_none() {
        return Err(Error::InvalidArgument("VIMCO gradients need K >= 2".into()));
    }
    let scorer = model.sbn.scorer();
    let outs: Vec<ParticleOut> = (0..cfg.k)
        .into_par_iter()
        .map(|k| {
            let streams = ParticleStreams::new(seed, step, k as u64);
            run_particle(model, &scorer, target, &cfg, fixed, streams, with_grad)
        })
        .collect::<Result<_>>()?;
    let log_weights: Vec<f64> = outs.iter().map(|o| o.particle.log_weight).collect();
    if let Some(k) = log_weights.iter().position(|f| !f.is_finite()) {
        let p = &outs[k].particle;
        return Err(Error::NonFinite {
            iteration: step as usize,
            detail: format!(
                "particle {k}: log weight {} (log target {}, log Q(tree) {}, log Q(q|tree) {}), edges {:?}, q {:?}",
                p.log_weight,
                p.log_target,
                p.log_q_tree,
                p.log_q_branch,
                p.tree.edges(),
                p.q.values()
            ),
        });
    }
    let value = multi_sample_bound(&log_weights);
    let grads = if with_grad {
        let w: Vec<f64> = log_weights.iter().map(|f| (f - value).exp() / cfg.k as f64).collect();
        let scores: Vec<Vec<f64>> = outs.iter().map(|o| o.score.clone()).collect();
        let sbn = match fixed {
            Some(_) => vec![0.0; model.sbn.logits().len()],
            None => grad_topology_vimco(&log_weights, &scores)?,
        };
        let mut branch = zeros_like(&outs[0].branch);
        let mut reverse = zeros_like(&outs[0].reverse);
        for (o, &wk) in outs.iter().zip(&w) {
            for (acc, gk) in branch.iter_mut().zip(&o.branch).chain(reverse.iter_mut().zip(&o.reverse)) {
                for (a, x) in acc.data_mut().iter_mut().zip(gk.data()) {
                    *a += wk * x;
                }
            }
        }
        // For xi, the score terms of the extra draws are traded for path
        // terms (their expectations agree), which after accounting for the
        // outer weights gives sum_k w_k A_k + (w_k^2 - 2 w_k) P_k.
        let mut reverse_dr = zeros_like(&reverse);
        for (o, &wk) in outs.iter().zip(&w) {
            for ((acc, a), p) in reverse_dr.iter_mut().zip(&o.rev_anchor).zip(&o.rev_path) {
                for ((x, ai), pi) in acc.data_mut().iter_mut().zip(a.data()).zip(p.data()) {
                    *x += wk * ai + (wk * wk - 2.0 * wk) * pi;
                }
            }
        }
        Some(ModelGradients { sbn, branch, reverse, reverse_dr })
    } else {
        None
    };
    Ok(BoundEstimate {
        config: cfg,
        value,
        log_weights,
        particles: outs.into_iter().map(|o| o.particle).collect(),
        grads,
    })
}

pub fn estimate_mlb(
    model: &Variational,
    target: &AnnealedTarget,
    k: usize,
    lambda: f64,
    seed: u64,
    step: u64,
    with_grad: bool,
) -> Result<BoundEstimate> {
    let cfg = BoundConfig { objective: Objective::Mlb, k, j: 0, lambda };
    estimate(model, target, cfg, seed, step, with_grad)
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_msilb(
    model: &Variational,
    target: &AnnealedTarget,
    k: usize,
    j: usize,
    lambda: f64,
    seed: u64,
    step: u64,
    with_grad: bool,
) -> Result<BoundEstimate> {
    let cfg = BoundConfig { objective: Objective::Msilb, k, j, lambda };
    estimate(model, target, cfg, seed, step, with_grad)
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_miwlb(
    model: &Variational,
    target: &AnnealedTarget,
    k: usize,
    j: usize,
    lambda: f64,
    seed: u64,
    step: u64,
    with_grad: bool,
) -> Result<BoundEstimate> {
    let cfg = BoundConfig { objective: Objective::Miwlb, k, j, lambda };
    estimate(model, target, cfg, seed, step, with_grad)
}

#[cfg(test)]
mod tests;
