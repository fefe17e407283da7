use rand::Rng;

use crate::error::{Error, Result};
use crate::phylo::TreeTopology;

use super::clade::{Clade, ParentContext, Subsplit};
use super::support::{RootingView, SbnSupport};

/// SBN over a fixed support with unconstrained logits, softmax-normalized
/// within each parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct SbnModel {
    support: SbnSupport,
    logits: Vec<f64>,
}

impl SbnModel {
    /// Uniform conditionals (all logits zero).
    pub fn new(support: SbnSupport) -> Self {
        let logits = vec![0.0; support.n_params()];
        SbnModel { support, logits }
    }

    pub fn with_logits(support: SbnSupport, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != support.n_params() {
            return Err(Error::Dimension(format!(
                "{} logits for a support with {} parameters",
                logits.len(),
                support.n_params()
            )));
        }
        Ok(SbnModel { support, logits })
    }

    pub fn support(&self) -> &SbnSupport {
        &self.support
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Snapshot of the normalized conditionals for repeated scoring/sampling.
    pub fn scorer(&self) -> SbnScorer<'_> {
        let mut log_probs = vec![0.0; self.logits.len()];
        for g in 0..self.support.n_groups() {
            let r = self.support.group_range(g);
            let xs = &self.logits[r.clone()];
            let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for (lp, x) in log_probs[r].iter_mut().zip(xs) {
                *lp = x - lse;
            }
        }
        SbnScorer { model: self, log_probs }
    }

    pub fn log_prob_rooted(&self, tree: &TreeTopology, root_edge: usize) -> Result<f64> {
        self.scorer().log_prob_rooted(tree, root_edge)
    }

    pub fn log_prob_unrooted(&self, tree: &TreeTopology) -> Result<f64> {
        self.scorer().log_prob_unrooted(tree)
    }

    pub fn log_prob_unrooted_grad(&self, tree: &TreeTopology) -> Result<(f64, Vec<f64>)> {
        self.scorer().log_prob_unrooted_grad(tree)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TreeTopology {
        self.scorer().sample(rng)
    }
}

pub struct SbnScorer<'a> {
    model: &'a SbnModel,
    log_probs: Vec<f64>,
}

impl SbnScorer<'_> {
    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    fn check(&self, tree: &TreeTopology) -> Result<()> {
        if tree.n_leaves() != self.model.support.n_taxa() {
            return Err(Error::TaxonMismatch(format!(
                "tree over {} taxa scored by an SBN over {}",
                tree.n_leaves(),
                self.model.support.n_taxa()
            )));
        }
        Ok(())
    }

    fn rooted_terms(&self, view: &RootingView<'_>, edge: usize) -> Option<Vec<(usize, usize)>> {
        let mut out = Vec::new();
        let mut ok = true;
        view.for_each_term(edge, |t| match self.model.support.locate(t) {
            Some(x) => out.push(x),
            None => ok = false,
        });
        ok.then_some(out)
    }

    /// Log-probability of `tree` rooted on edge `root_edge`.
    pub fn log_prob_rooted(&self, tree: &TreeTopology, root_edge: usize) -> Result<f64> {
        self.log_prob_rooted_grad(tree, root_edge).map(|(v, _)| v)
    }

    pub fn log_prob_rooted_grad(&self, tree: &TreeTopology, root_edge: usize) -> Result<(f64, Vec<f64>)> {
        self.check(tree)?;
        if root_edge >= tree.n_edges() {
            return Err(Error::InvalidArgument(format!("no edge {root_edge}")));
        }
        let view = RootingView::new(tree);
        let terms = self.rooted_terms(&view, root_edge).ok_or(Error::OutOfSupport)?;
        let mut grad = vec![0.0; self.log_probs.len()];
        let lp = self.accumulate(&terms, 1.0, &mut grad);
        Ok((lp, grad))
    }

    // Adds `weight * d(log p)/d(logits)` for one rooting to `grad`.
    fn accumulate(&self, terms: &[(usize, usize)], weight: f64, grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for &(g, i) in terms {
            lp += self.log_probs[i];
            grad[i] += weight;
            for j in self.model.support.group_range(g) {
                grad[j] -= weight * self.log_probs[j].exp();
            }
        }
        lp
    }

    /// Log-probability of the unrooted tree: log-sum-exp over its rootings,
    /// skipping rootings that leave the support.
    pub fn log_prob_unrooted(&self, tree: &TreeTopology) -> Result<f64> {
        self.check(tree)?;
        let view = RootingView::new(tree);
        let lps: Vec<f64> = (0..tree.n_edges())
            .filter_map(|e| self.rooted_terms(&view, e))
            .map(|terms| terms.iter().map(|&(_, i)| self.log_probs[i]).sum())
            .collect();
        if lps.is_empty() {
            return Err(Error::OutOfSupport);
        }
        Ok(logsumexp(&lps))
    }

    pub fn log_prob_unrooted_grad(&self, tree: &TreeTopology) -> Result<(f64, Vec<f64>)> {
        self.check(tree)?;
        let view = RootingView::new(tree);
        let rootings: Vec<(f64, Vec<(usize, usize)>)> = (0..tree.n_edges())
            .filter_map(|e| self.rooted_terms(&view, e))
            .map(|terms| (terms.iter().map(|&(_, i)| self.log_probs[i]).sum(), terms))
            .collect();
        if rootings.is_empty() {
            return Err(Error::OutOfSupport);
        }
        let lps: Vec<f64> = rootings.iter().map(|r| r.0).collect();
        let total = logsumexp(&lps);
        let mut grad = vec![0.0; self.log_probs.len()];
        for (lp, terms) in &rootings {
            self.accumulate(terms, (lp - total).exp(), &mut grad);
        }
        Ok((total, grad))
    }

    fn draw<R: Rng + ?Sized>(&self, range: std::ops::Range<usize>, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let last = range.end - 1;
        for i in range {
            acc += self.log_probs[i].exp();
            if u < acc {
                return i;
            }
        }
        last
    }

    /// Ancestral sample of a rooted tree, returned derooted in canonical form.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TreeTopology {
        let support = &self.model.support;
        let n = support.n_taxa();
        let root = support.root_subsplits()[self.draw(support.group_range(0), rng)];
        let mut edges = Vec::with_capacity(2 * n - 3);
        let mut next_internal = n;
        let mut build = |clade: Clade, sister: Clade, rng: &mut R| -> usize {
            // Iterative expansion: (clade, sister, node id it attaches to).
            let top = if clade.len() == 1 {
                return clade.min_taxon().expect("nonempty");
            } else {
                next_internal += 1;
                next_internal - 1
            };
            let mut stack = vec![(clade, sister, top)];
            while let Some((c, s, node)) = stack.pop() {
                let split = if c.len() == 2 {
                    let lo = Clade::singleton(c.min_taxon().expect("nonempty"));
                    Subsplit::new(lo, Clade(c.0 & !lo.0))
                } else {
                    let g = support
                        .context_group(&ParentContext { clade: c, sister: s })
                        .expect("support is closed under sampling");
                    let i = self.draw(support.group_range(g), rng);
                    support.children(g - 1)[i - support.group_range(g).start]
                };
                let [x, y] = split.parts();
                for (part, other) in [(x, y), (y, x)] {
                    if part.len() == 1 {
                        edges.push((node, part.min_taxon().expect("nonempty")));
                    } else {
                        let id = next_internal;
                        next_internal += 1;
                        edges.push((node, id));
                        stack.push((part, other, id));
                    }
                }
            }
            top
        };
        let a = build(root.big, root.small, rng);
        let b = build(root.small, root.big, rng);
        edges.push((a, b));
        TreeTopology::from_edges(n, edges)
            .expect("sampled subsplits form a tree")
            .canonical()
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
