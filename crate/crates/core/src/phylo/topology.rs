use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::sbn::clade::{Clade, MAX_TAXA};

/// Unrooted bifurcating leaf-labeled tree.
///
/// Nodes `0..n_leaves` are leaves (taxon ids), nodes `n_leaves..2n-2` are
/// internal. Edges are stored as `(min, max)` node pairs; their order is the
/// edge order used by [`BranchLengths`](super::BranchLengths) and every
/// per-edge vector derived from this topology.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TreeTopology {
    n_leaves: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
    node_edges: Vec<Vec<usize>>,
}

impl TreeTopology {
    /// Validates and builds a topology from an edge list, keeping the given
    /// node numbering and edge order.
    pub fn from_edges(n_leaves: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if n_leaves < 3 {
            return Err(Error::TooFewTaxa(n_leaves));
        }
        if n_leaves > MAX_TAXA {
            return Err(Error::InvalidTree(format!(
                "{n_leaves} taxa exceeds the supported maximum of {MAX_TAXA}"
            )));
        }
        let n_nodes = 2 * n_leaves - 2;
        if edges.len() != 2 * n_leaves - 3 {
            return Err(Error::InvalidTree(format!(
                "expected {} edges, got {}",
                2 * n_leaves - 3,
                edges.len()
            )));
        }
        let mut adjacency = vec![Vec::with_capacity(3); n_nodes];
        let mut node_edges = vec![Vec::with_capacity(3); n_nodes];
        let mut normalized = Vec::with_capacity(edges.len());
        for (i, &(a, b)) in edges.iter().enumerate() {
            if a >= n_nodes || b >= n_nodes || a == b {
                return Err(Error::InvalidTree(format!("bad edge ({a}, {b})")));
            }
            let e = (a.min(b), a.max(b));
            normalized.push(e);
            adjacency[a].push(b);
            adjacency[b].push(a);
            node_edges[a].push(i);
            node_edges[b].push(i);
        }
        for (v, nbrs) in adjacency.iter().enumerate() {
            let want = if v < n_leaves { 1 } else { 3 };
            if nbrs.len() != want {
                return Err(Error::InvalidTree(format!(
                    "node {v} has degree {}, expected {want}",
                    nbrs.len()
                )));
            }
        }
        // |E| = |V| - 1 plus connectivity implies acyclic.
        let mut seen = vec![false; n_nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        if count != n_nodes {
            return Err(Error::InvalidTree("graph is not connected".into()));
        }
        let mut uniq = normalized.clone();
        uniq.sort_unstable();
        uniq.dedup();
        if uniq.len() != normalized.len() {
            return Err(Error::InvalidTree("repeated edge".into()));
        }
        Ok(TreeTopology {
            n_leaves,
            edges: normalized,
            adjacency,
            node_edges,
        })
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn n_nodes(&self) -> usize {
        2 * self.n_leaves - 2
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    /// Edge ids incident to `node`, aligned with [`neighbors`](Self::neighbors).
    pub fn incident_edges(&self, node: usize) -> &[usize] {
        &self.node_edges[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n_leaves
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a]
            .iter()
            .position(|&w| w == b)
            .map(|i| self.node_edges[a][i])
    }

    /// Nodes in postorder for the tree rooted at `root`, each paired with its
    /// parent (`None` for the root, which comes last).
    pub fn postorder(&self, root: usize) -> Vec<(usize, Option<usize>)> {
        let mut out = Vec::with_capacity(self.n_nodes());
        let mut stack = vec![(root, None::<usize>, false)];
        while let Some((v, parent, expanded)) = stack.pop() {
            if expanded {
                out.push((v, parent));
                continue;
            }
            stack.push((v, parent, true));
            for &w in self.adjacency[v].iter().rev() {
                if Some(w) != parent {
                    stack.push((w, Some(v), false));
                }
            }
        }
        out
    }

    /// Leaf set on the `to` side of the directed edge `from -> to`.
    pub fn clade_below(&self, from: usize, to: usize) -> Clade {
        let mut clade = Clade::EMPTY;
        let mut stack = vec![(to, from)];
        while let Some((v, p)) = stack.pop() {
            if self.is_leaf(v) {
                clade = clade.union(Clade::singleton(v));
            }
            for &w in &self.adjacency[v] {
                if w != p {
                    stack.push((w, v));
                }
            }
        }
        clade
    }

    /// Clades below every directed edge, keyed by `(from, to)`.
    pub fn directed_clades(&self) -> HashMap<(usize, usize), Clade> {
        let mut out = HashMap::with_capacity(2 * self.n_edges());
        // Root at leaf 0: downward clades by postorder, upward by complement.
        let full = Clade::full(self.n_leaves);
        for (v, parent) in self.postorder(0) {
            let Some(p) = parent else { continue };
            let mut c = if self.is_leaf(v) {
                Clade::singleton(v)
            } else {
                Clade::EMPTY
            };
            for &w in &self.adjacency[v] {
                if w != p {
                    c = c.union(out[&(v, w)]);
                }
            }
            out.insert((p, v), c);
            out.insert((v, p), c.complement(self.n_leaves).intersection(full));
        }
        out
    }

    /// Leaf bipartition induced by each edge, as the side not containing
    /// taxon 0, in edge order.
    pub fn splits(&self) -> Vec<Clade> {
        let dc = self.directed_clades();
        self.edges
            .iter()
            .map(|&(a, b)| {
                let c = dc[&(a, b)];
                if c.contains(0) {
                    dc[&(b, a)]
                } else {
                    c
                }
            })
            .collect()
    }

    /// Same tree with internal nodes renumbered by a leaf-0-anchored preorder
    /// (children visited by smallest descendant taxon) and edges sorted by
    /// `(min, max)` node id. Also returns, for each new edge, the index of the
    /// corresponding edge in `self`.
    pub fn canonical_with_map(&self) -> (TreeTopology, Vec<usize>) {
        let n = self.n_leaves;
        let dc = self.directed_clades();
        let mut relabel = vec![usize::MAX; self.n_nodes()];
        for (leaf, slot) in relabel.iter_mut().enumerate().take(n) {
            *slot = leaf;
        }
        let mut next = n;
        let start = self.adjacency[0][0];
        let mut stack = vec![(start, 0usize)];
        while let Some((v, p)) = stack.pop() {
            if self.is_leaf(v) {
                continue;
            }
            relabel[v] = next;
            next += 1;
            let mut kids: Vec<usize> = self.adjacency[v].iter().copied().filter(|&w| w != p).collect();
            kids.sort_by_key(|&w| dc[&(v, w)].min_taxon());
            for &w in kids.iter().rev() {
                stack.push((w, v));
            }
        }
        let mut mapped: Vec<((usize, usize), usize)> = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| {
                let (x, y) = (relabel[a], relabel[b]);
                ((x.min(y), x.max(y)), i)
            })
            .collect();
        mapped.sort_unstable();
        let edges = mapped.iter().map(|&(e, _)| e).collect();
        let order = mapped.iter().map(|&(_, i)| i).collect();
        let tree = TreeTopology::from_edges(n, edges).expect("relabeling preserves validity");
        (tree, order)
    }

    pub fn canonical(&self) -> TreeTopology {
        self.canonical_with_map().0
    }

    pub fn is_canonical(&self) -> bool {
        *self == self.canonical()
    }

    /// Same topology with edges reordered so that new edge `i` is old edge
    /// `perm[i]`.
    pub fn permute_edges(&self, perm: &[usize]) -> Result<TreeTopology> {
        check_permutation(perm, self.n_edges())?;
        let edges = perm.iter().map(|&i| self.edges[i]).collect();
        TreeTopology::from_edges(self.n_leaves, edges)
    }

    /// Same topology with internal node ids relabeled: old internal node
    /// `n_leaves + i` becomes `n_leaves + perm[i]`. Edge order is kept.
    pub fn relabel_internal(&self, perm: &[usize]) -> Result<TreeTopology> {
        let n = self.n_leaves;
        check_permutation(perm, n - 2)?;
        let map = |v: usize| if v < n { v } else { n + perm[v - n] };
        let edges = self.edges.iter().map(|&(a, b)| (map(a), map(b))).collect();
        TreeTopology::from_edges(n, edges)
    }

    /// Whether two topologies are the same unrooted tree (same split set).
    pub fn same_topology(&self, other: &TreeTopology) -> bool {
        if self.n_leaves != other.n_leaves {
            return false;
        }
        let mut a = self.splits();
        let mut b = other.splits();
        a.sort_unstable();
        b.sort_unstable();
        a == b
    }

    /// Three-taxon star.
    pub fn star3() -> TreeTopology {
        TreeTopology::from_edges(3, vec![(0, 3), (1, 3), (2, 3)]).expect("valid star")
    }

    /// Inserts a new leaf onto edge `edge`, returning a topology on
    /// `n_leaves + 1` taxa whose new leaf has id `n_leaves`.
    pub fn insert_leaf(&self, edge: usize) -> TreeTopology {
        let n = self.n_leaves;
        let shift = |v: usize| if v < n { v } else { v + 1 };
        let new_leaf = n;
        let new_internal = 2 * (n + 1) - 3;
        let mut edges = Vec::with_capacity(self.n_edges() + 2);
        for (i, &(a, b)) in self.edges.iter().enumerate() {
            if i == edge {
                edges.push((shift(a), new_internal));
                edges.push((shift(b), new_internal));
                edges.push((new_leaf, new_internal));
            } else {
                edges.push((shift(a), shift(b)));
            }
        }
        TreeTopology::from_edges(n + 1, edges).expect("leaf insertion preserves validity")
    }

    /// Uniformly random unrooted topology by stepwise leaf addition.
    pub fn random<R: Rng + ?Sized>(n_leaves: usize, rng: &mut R) -> Result<TreeTopology> {
        if n_leaves < 3 {
            return Err(Error::TooFewTaxa(n_leaves));
        }
        let mut t = TreeTopology::star3();
        while t.n_leaves() < n_leaves {
            let e = rng.random_range(0..t.n_edges());
            t = t.insert_leaf(e);
        }
        Ok(t.canonical())
    }

    /// Every unrooted topology on `n_leaves` taxa, in canonical form.
    pub fn enumerate_all(n_leaves: usize) -> Result<Vec<TreeTopology>> {
        if n_leaves < 3 {
            return Err(Error::TooFewTaxa(n_leaves));
        }
        let mut level = vec![TreeTopology::star3()];
        for _ in 3..n_leaves {
            level = level
                .iter()
                .flat_map(|t| (0..t.n_edges()).map(move |e| t.insert_leaf(e)))
                .collect();
        }
        Ok(level.into_iter().map(|t| t.canonical()).collect())
    }
}

/// Number of unrooted bifurcating topologies on `n` taxa, `(2n-5)!!`.
pub fn unrooted_topology_count(n: usize) -> f64 {
    (3..n).map(|k| (2 * k - 3) as f64).product()
}

/// Log of [`unrooted_topology_count`].
pub fn log_unrooted_topology_count(n: usize) -> f64 {
    (3..n).map(|k| ((2 * k - 3) as f64).ln()).sum()
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Dimension(format!(
            "permutation of length {} for {n} items",
            perm.len()
        )));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        seen[p] = true;
    }
    Ok(())
}
