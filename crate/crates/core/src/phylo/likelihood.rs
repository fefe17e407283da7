//! Felsenstein pruning with per-pattern rescaling and analytic branch
//! gradients.

use std::collections::HashMap;

use super::jc::{self, N_STATES};
use super::{BranchLengths, TreeTopology};
use crate::error::{Error, Result};
use crate::seqio::alignment::{state_mask, Alignment};

type Partial = [f64; N_STATES];

/// Unique alignment columns with multiplicities.
#[derive(Debug, Clone)]
pub struct SitePatterns {
    n_taxa: usize,
    /// `leaf[taxon][pattern]`
    leaf: Vec<Vec<Partial>>,
    counts: Vec<f64>,
}

fn mask_partial(mask: u8) -> Partial {
    let mut p = [0.0; N_STATES];
    for (s, slot) in p.iter_mut().enumerate() {
        if mask >> s & 1 == 1 {
            *slot = 1.0;
        }
    }
    p
}

impl SitePatterns {
    /// Compresses identical columns.
    pub fn compress(alignment: &Alignment) -> Self {
        Self::build(alignment, true)
    }

    /// One pattern per site, in site order.
    pub fn uncompressed(alignment: &Alignment) -> Self {
        Self::build(alignment, false)
    }

    fn build(alignment: &Alignment, compress: bool) -> Self {
        let n = alignment.n_taxa();
        let mut index: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut columns: Vec<Vec<u8>> = Vec::new();
        let mut counts: Vec<f64> = Vec::new();
        for s in 0..alignment.n_sites() {
            let col: Vec<u8> = (0..n)
                .map(|t| state_mask(alignment.row(t)[s]).expect("validated alignment"))
                .collect();
            if compress {
                if let Some(&i) = index.get(&col) {
                    counts[i] += 1.0;
                    continue;
                }
                index.insert(col.clone(), columns.len());
            }
            columns.push(col);
            counts.push(1.0);
        }
        let leaf = (0..n)
            .map(|t| columns.iter().map(|c| mask_partial(c[t])).collect())
            .collect();
        SitePatterns {
            n_taxa: n,
            leaf,
            counts,
        }
    }

    pub fn n_taxa(&self) -> usize {
        self.n_taxa
    }

    pub fn n_patterns(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub(crate) fn leaf_partial(&self, taxon: usize, pattern: usize) -> &Partial {
        &self.leaf[taxon][pattern]
    }

    fn check(&self, tree: &TreeTopology, q: &BranchLengths) -> Result<()> {
        if tree.n_leaves() != self.n_taxa {
            return Err(Error::Dimension(format!(
                "tree has {} leaves, alignment has {} taxa",
                tree.n_leaves(),
                self.n_taxa
            )));
        }
        if q.len() != tree.n_edges() {
            return Err(Error::Dimension(format!(
                "{} branch lengths for {} edges",
                q.len(),
                tree.n_edges()
            )));
        }
        for &t in q.values() {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::InvalidBranchLength(t));
            }
        }
        Ok(())
    }

    /// `log P(Y | tree, q)`.
    pub fn log_likelihood(&self, tree: &TreeTopology, q: &BranchLengths) -> Result<f64> {
        self.log_likelihood_with_root(tree, q, tree.n_leaves())
    }

    /// As [`log_likelihood`](Self::log_likelihood) with the pruning root
    /// placed at a chosen internal node.
    pub fn log_likelihood_with_root(
        &self,
        tree: &TreeTopology,
        q: &BranchLengths,
        root: usize,
    ) -> Result<f64> {
        self.check(tree, q)?;
        if tree.is_leaf(root) || root >= tree.n_nodes() {
            return Err(Error::InvalidArgument(format!("{root} is not an internal node")));
        }
        let pass = Pruning::down(self, tree, q, root);
        Ok(pass.log_likelihood(self))
    }

    /// Log-likelihood and `d log P / d q_e` for every edge.
    pub fn log_likelihood_grad(
        &self,
        tree: &TreeTopology,
        q: &BranchLengths,
    ) -> Result<(f64, Vec<f64>)> {
        self.check(tree, q)?;
        let root = tree.n_leaves();
        let pass = Pruning::down(self, tree, q, root);
        let value = pass.log_likelihood(self);
        let grad = pass.gradient(self, tree, q);
        Ok((value, grad))
    }
}

/// Sum in a fixed pairwise order.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

fn rescale(v: &mut Partial) -> f64 {
    let m = v.iter().cloned().fold(0.0f64, f64::max);
    if m > 0.0 && m.is_finite() {
        for x in v.iter_mut() {
            *x /= m;
        }
        m.ln()
    } else {
        0.0
    }
}

struct Pruning {
    root: usize,
    order: Vec<(usize, Option<usize>)>,
    /// Subtree partials (rescaled) per node and pattern.
    down: Vec<Vec<Partial>>,
    down_scale: Vec<Vec<f64>>,
    /// `P(t_v) down[v]`, the message sent by `v` to its parent.
    up_msg: Vec<Vec<Partial>>,
    decay: Vec<(f64, f64)>,
    parent_edge: Vec<usize>,
}

impl Pruning {
    fn down(patterns: &SitePatterns, tree: &TreeTopology, q: &BranchLengths, root: usize) -> Self {
        let n_nodes = tree.n_nodes();
        let n_pat = patterns.n_patterns();
        let order = tree.postorder(root);
        let mut down = vec![Vec::new(); n_nodes];
        let mut down_scale = vec![Vec::new(); n_nodes];
        let mut up_msg: Vec<Vec<Partial>> = vec![Vec::new(); n_nodes];
        let mut decay = vec![(1.0, 0.0); n_nodes];
        let mut parent_edge = vec![usize::MAX; n_nodes];
        for &(v, parent) in &order {
            if tree.is_leaf(v) {
                down[v] = patterns.leaf[v].clone();
                down_scale[v] = vec![0.0; n_pat];
            } else {
                let mut part = vec![[1.0; N_STATES]; n_pat];
                let mut scale = vec![0.0; n_pat];
                for &w in tree.neighbors(v) {
                    if Some(w) == parent {
                        continue;
                    }
                    for p in 0..n_pat {
                        let m = &up_msg[w][p];
                        for s in 0..N_STATES {
                            part[p][s] *= m[s];
                        }
                        scale[p] += down_scale[w][p];
                    }
                }
                if parent.is_some() {
                    for p in 0..n_pat {
                        scale[p] += rescale(&mut part[p]);
                    }
                }
                down[v] = part;
                down_scale[v] = scale;
            }
            if let Some(u) = parent {
                let e = tree.edge_between(v, u).expect("adjacent");
                parent_edge[v] = e;
                let t = q.values()[e];
                decay[v] = (jc::decay(t), jc::decay_complement(t));
                let (de, dm) = decay[v];
                up_msg[v] = down[v].iter().map(|d| jc::apply(de, dm, d)).collect();
            }
        }
        Pruning {
            root,
            order,
            down,
            down_scale,
            up_msg,
            decay,
            parent_edge,
        }
    }

    fn log_likelihood(&self, patterns: &SitePatterns) -> f64 {
        let root = &self.down[self.root];
        let scale = &self.down_scale[self.root];
        let per_pattern: Vec<f64> = (0..patterns.n_patterns())
            .map(|p| {
                let l: f64 = root[p].iter().map(|x| 0.25 * x).sum();
                patterns.counts[p] * (l.ln() + scale[p])
            })
            .collect();
        pairwise_sum(&per_pattern)
    }

    fn gradient(&self, patterns: &SitePatterns, tree: &TreeTopology, q: &BranchLengths) -> Vec<f64> {
        let n_pat = patterns.n_patterns();
        let mut grad = vec![0.0; q.len()];
        // For each child v of u, `a` is the partial at u excluding v's subtree,
        // including the root distribution, rescaled per pattern.
        // msg_down[v] = P(t_v) above[v], what v receives from its parent.
        let mut msg_down: Vec<Vec<Partial>> = vec![Vec::new(); tree.n_nodes()];
        for &(u, parent) in self.order.iter().rev() {
            if tree.is_leaf(u) {
                continue;
            }
            for &v in tree.neighbors(u) {
                if Some(v) == parent {
                    continue;
                }
                let mut a = vec![[0.25; N_STATES]; n_pat];
                if parent.is_some() {
                    for p in 0..n_pat {
                        a[p] = msg_down[u][p];
                    }
                }
                for &w in tree.neighbors(u) {
                    if Some(w) == parent || w == v {
                        continue;
                    }
                    for p in 0..n_pat {
                        for s in 0..N_STATES {
                            a[p][s] *= self.up_msg[w][p][s];
                        }
                    }
                }
                for part in a.iter_mut() {
                    rescale(part);
                }
                let (e, m) = self.decay[v];
                let mut acc = Vec::with_capacity(n_pat);
                for p in 0..n_pat {
                    let d = &self.down[v][p];
                    let pd = &self.up_msg[v][p];
                    let dpd = jc::apply_derivative(e, d);
                    let num: f64 = (0..N_STATES).map(|s| a[p][s] * dpd[s]).sum();
                    let den: f64 = (0..N_STATES).map(|s| a[p][s] * pd[s]).sum();
                    acc.push(patterns.counts[p] * num / den);
                }
                grad[self.parent_edge[v]] = pairwise_sum(&acc);
                if !tree.is_leaf(v) {
                    msg_down[v] = a.iter().map(|x| jc::apply(e, m, x)).collect();
                }
            }
        }
        grad
    }
}
