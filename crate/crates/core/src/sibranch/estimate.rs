use rand::Rng;

use crate::error::{Error, Result};
use crate::phylo::{BranchLengths, TreeTopology};
use crate::tensor::{logmeanexp, Graph, Tensor};

use super::model::{
    check_hidden, check_positive, mixing_log_density_blocks, sample_mixing, SiBranchModel, HALF_LN_2PI,
};
use super::reverse::ReverseModel;

/// Where the inner hidden variables of a marginal estimate come from.
#[derive(Debug, Clone, Copy)]
pub enum MarginalMode<'a> {
    /// Draws from the mixing distribution, plain average of conditionals.
    Prior,
    /// Draws from a reverse model, importance-weighted average.
    Reverse(&'a ReverseModel),
}

impl SiBranchModel {
    fn check_tree(&self, tree: &TreeTopology) -> Result<()> {
        if tree.n_leaves() != self.n_taxa() {
            return Err(Error::TaxonMismatch(format!(
                "model for {} taxa given a {}-taxon tree",
                self.n_taxa(),
                tree.n_leaves()
            )));
        }
        Ok(())
    }

    /// Per-edge location and (clamped) log-scale at hidden variables `z`.
    pub fn edge_params(&self, tree: &TreeTopology, z: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_tree(tree)?;
        check_hidden(z, tree.n_edges(), self.hidden_dim())?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let enc = b.encode(&mut g, tree)?;
        let zv = g.constant(z.clone());
        let (mu, ls) = b.heads(&mut g, &enc, zv)?;
        Ok((g.value(mu).data().to_vec(), g.value(ls).data().to_vec()))
    }

    /// `log Q(q | tau, z)`.
    pub fn conditional_log_density(&self, tree: &TreeTopology, z: &Tensor, q: &BranchLengths) -> Result<f64> {
        self.check_tree(tree)?;
        check_hidden(z, tree.n_edges(), self.hidden_dim())?;
        check_lengths(tree, q)?;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let enc = b.encode(&mut g, tree)?;
        let zv = g.constant(z.clone());
        let lq = g.constant(Tensor::column(q.values().iter().map(|x| x.ln()).collect()));
        let out = b.log_density_blocks(&mut g, &enc, zv, lq)?;
        Ok(g.value(out).item())
    }

    /// Per-edge terms of [`conditional_log_density`](Self::conditional_log_density).
    pub fn conditional_log_density_terms(
        &self,
        tree: &TreeTopology,
        z: &Tensor,
        q: &BranchLengths,
    ) -> Result<Vec<f64>> {
        check_lengths(tree, q)?;
        let (mu, ls) = self.edge_params(tree, z)?;
        Ok(q.values()
            .iter()
            .zip(mu.iter().zip(&ls))
            .map(|(&x, (&m, &s))| lognormal_log_pdf(x, m, s))
            .collect())
    }

    /// Draws `q ~ Q(q | tau, z)` and returns it with its log density.
    pub fn sample_branch<R: Rng + ?Sized>(
        &self,
        tree: &TreeTopology,
        z: &Tensor,
        rng: &mut R,
    ) -> Result<(BranchLengths, f64)> {
        let (mu, ls) = self.edge_params(tree, z)?;
        let mut q = Vec::with_capacity(mu.len());
        let mut lp = 0.0;
        for (&m, &s) in mu.iter().zip(&ls) {
            let e: f64 = rng.sample(rand_distr::StandardNormal);
            let x = (m + s.exp() * e).exp();
            lp += lognormal_log_pdf(x, m, s);
            q.push(x);
        }
        Ok((BranchLengths::new(q), lp))
    }

    /// `log (1/(J+1)) sum_j w_j` from caller-supplied standard normal draws
    /// (`(J+1) * n_edges` rows, block `j` in edge order). In prior mode the
    /// draws are the hidden variables; in reverse mode they are the noise of
    /// the reparameterized reverse draws and `w_j` carries the density ratio.
    pub fn marginal_log_density_from_draws(
        &self,
        mode: MarginalMode<'_>,
        tree: &TreeTopology,
        q: &BranchLengths,
        draws: &Tensor,
    ) -> Result<f64> {
        Ok(logmeanexp(&self.marginal_log_terms(mode, tree, q, draws)?))
    }

    /// The `log w_j` averaged by
    /// [`marginal_log_density_from_draws`](Self::marginal_log_density_from_draws).
    pub fn marginal_log_terms(
        &self,
        mode: MarginalMode<'_>,
        tree: &TreeTopology,
        q: &BranchLengths,
        draws: &Tensor,
    ) -> Result<Vec<f64>> {
        self.check_tree(tree)?;
        check_lengths(tree, q)?;
        let e = tree.n_edges();
        if draws.cols() != self.hidden_dim() || draws.rows() == 0 || draws.rows() % e != 0 {
            return Err(Error::Dimension(format!("inner draws {:?} for {e} edges", draws.shape())));
        }
        let m = draws.rows() / e;
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let enc = b.encode(&mut g, tree)?;
        let lq = g.constant(Tensor::column(q.values().iter().map(|x| x.ln()).collect()));
        let terms = match mode {
            MarginalMode::Prior => {
                let z = g.constant(draws.clone());
                b.log_density_blocks(&mut g, &enc, z, lq)?
            }
            MarginalMode::Reverse(rev) => {
                check_reverse(self, rev)?;
                let r = rev.bind(&mut g, false);
                let p = r.params(&mut g, &enc, lq)?;
                let z = r.sample(&mut g, &p, draws.clone())?;
                let cond = b.log_density_blocks(&mut g, &enc, z, lq)?;
                let mix = mixing_log_density_blocks(&mut g, z, m)?;
                let rd = r.log_density_blocks(&mut g, &p, z)?;
                let ratio = g.sub(mix, rd)?;
                g.add(cond, ratio)?
            }
        };
        Ok(g.value(terms).data().to_vec())
    }

    /// Standalone marginal estimate with `J + 1` fresh draws.
    pub fn marginal_log_density_estimate<R: Rng + ?Sized>(
        &self,
        mode: MarginalMode<'_>,
        tree: &TreeTopology,
        q: &BranchLengths,
        j: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let draws = sample_mixing((j + 1) * tree.n_edges(), self.hidden_dim(), rng);
        self.marginal_log_density_from_draws(mode, tree, q, &draws)
    }
}

/// `log R(z | tau, q)`.
pub fn reverse_log_density(
    branch: &SiBranchModel,
    rev: &ReverseModel,
    tree: &TreeTopology,
    q: &BranchLengths,
    z: &Tensor,
) -> Result<f64> {
    branch.check_tree(tree)?;
    check_reverse(branch, rev)?;
    check_lengths(tree, q)?;
    check_hidden(z, tree.n_edges(), rev.hidden_dim())?;
    let mut g = Graph::new();
    let b = branch.bind(&mut g, false);
    let enc = b.encode(&mut g, tree)?;
    let r = rev.bind(&mut g, false);
    let lq = g.constant(Tensor::column(q.values().iter().map(|x| x.ln()).collect()));
    let p = r.params(&mut g, &enc, lq)?;
    let zv = g.constant(z.clone());
    let out = r.log_density_blocks(&mut g, &p, zv)?;
    Ok(g.value(out).item())
}

/// Draws `z ~ R(z | tau, q)` with its log density.
pub fn reverse_sample<R: Rng + ?Sized>(
    branch: &SiBranchModel,
    rev: &ReverseModel,
    tree: &TreeTopology,
    q: &BranchLengths,
    rng: &mut R,
) -> Result<(Tensor, f64)> {
    branch.check_tree(tree)?;
    check_reverse(branch, rev)?;
    check_lengths(tree, q)?;
    let eps = sample_mixing(tree.n_edges(), rev.hidden_dim(), rng);
    let mut g = Graph::new();
    let b = branch.bind(&mut g, false);
    let enc = b.encode(&mut g, tree)?;
    let r = rev.bind(&mut g, false);
    let lq = g.constant(Tensor::column(q.values().iter().map(|x| x.ln()).collect()));
    let p = r.params(&mut g, &enc, lq)?;
    let z = r.sample(&mut g, &p, eps)?;
    let out = r.log_density_blocks(&mut g, &p, z)?;
    Ok((g.value(z).clone(), g.value(out).item()))
}

pub(crate) fn lognormal_log_pdf(x: f64, mu: f64, log_sigma: f64) -> f64 {
    let lx = x.ln();
    let u = (lx - mu) * (-log_sigma).exp();
    -0.5 * u * u - log_sigma - lx - HALF_LN_2PI
}

fn check_lengths(tree: &TreeTopology, q: &BranchLengths) -> Result<()> {
    if q.len() != tree.n_edges() {
        return Err(Error::Dimension(format!("{} branch lengths for {} edges", q.len(), tree.n_edges())));
    }
    check_positive(q)
}

pub(crate) fn check_reverse(branch: &SiBranchModel, rev: &ReverseModel) -> Result<()> {
    let cfg = branch.config();
    if rev.hidden_dim() != cfg.hidden_dim || rev.mu_head().input_dim() != cfg.feature_dim + 1 {
        return Err(Error::Dimension("reverse model does not match the branch model".into()));
    }
    Ok(())
}
