use crate::phylo::TreeTopology;
use crate::tensor::Tensor;

/// Raw topological node embeddings: one-hot leaves, and internal nodes at the
/// minimizer of the Dirichlet energy (each internal vector is the mean of its
/// three neighbors). Row `u` is node `u`; there are `n_leaves` columns.
///
/// Linear time: a postorder pass writes each internal node as
/// `f_u = c_u f_parent + d_u`, then a preorder pass substitutes from the root.
pub fn dirichlet_embeddings(tree: &TreeTopology) -> Tensor {
    let n = tree.n_leaves();
    let n_nodes = tree.n_nodes();
    let root = n;
    let mut c = vec![0.0; n_nodes];
    let mut d = Tensor::zeros(n_nodes, n);
    for leaf in 0..n {
        d.row_mut(leaf)[leaf] = 1.0;
    }
    let order = tree.postorder(root);
    for &(u, parent) in &order {
        if tree.is_leaf(u) {
            continue;
        }
        let mut c_sum = 0.0;
        let mut d_sum = vec![0.0; n];
        for &w in tree.neighbors(u) {
            if Some(w) == parent {
                continue;
            }
            c_sum += c[w];
            for (s, x) in d_sum.iter_mut().zip(d.row(w)) {
                *s += x;
            }
        }
        // The root has no parent term, so it solves directly for f_root.
        let cu = 1.0 / (3.0 - c_sum);
        c[u] = if parent.is_some() { cu } else { 0.0 };
        for (o, s) in d.row_mut(u).iter_mut().zip(&d_sum) {
            *o = cu * s;
        }
    }
    let mut f = d;
    for &(u, parent) in order.iter().rev() {
        let Some(p) = parent else { continue };
        if tree.is_leaf(u) {
            continue;
        }
        let cu = c[u];
        let fp = f.row(p).to_vec();
        for (o, x) in f.row_mut(u).iter_mut().zip(fp) {
            *o += cu * x;
        }
    }
    f
}

/// Largest distance between an internal embedding and the mean of its
/// neighbors.
pub fn harmonic_residual(tree: &TreeTopology, f: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    for u in tree.n_leaves()..tree.n_nodes() {
        let mut sq = 0.0;
        for k in 0..f.cols() {
            let mean: f64 = tree.neighbors(u).iter().map(|&w| f.get(w, k)).sum::<f64>() / 3.0;
            sq += (f.get(u, k) - mean).powi(2);
        }
        worst = worst.max(sq.sqrt());
    }
    worst
}
