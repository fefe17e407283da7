use rand::Rng;

use crate::error::{Error, Result};
use crate::phylo::TreeTopology;
use crate::tensor::{BoundMlp, Gradients, Graph, Mlp, Tensor, Var};

/// Shape of the message-passing network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnConfig {
    pub feature_dim: usize,
    pub mlp_width: usize,
    pub mlp_hidden_layers: usize,
    pub rounds: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            feature_dim: 100,
            mlp_width: 100,
            mlp_hidden_layers: 2,
            rounds: 2,
        }
    }
}

impl GnnConfig {
    fn mlp_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(self.mlp_width, self.mlp_hidden_layers));
        d.push(output);
        d
    }
}

/// Learnable weights of the topology encoder: a linear lift of the raw
/// embeddings, `rounds` edge-convolution rounds, and a node readout.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    n_taxa: usize,
    config: GnnConfig,
    lift: Mlp,
    message: Vec<Mlp>,
    update: Vec<Mlp>,
    readout: Mlp,
}

impl GnnParams {
    pub fn new<R: Rng + ?Sized>(n_taxa: usize, config: GnnConfig, rng: &mut R) -> Self {
        Self::build(n_taxa, config, |dims| Mlp::new(dims, rng))
    }

    pub fn zeros(n_taxa: usize, config: GnnConfig) -> Self {
        Self::build(n_taxa, config, Mlp::zeros)
    }

    fn build(n_taxa: usize, config: GnnConfig, mut make: impl FnMut(&[usize]) -> Mlp) -> Self {
        let d = config.feature_dim;
        let lift = make(&[n_taxa, d]);
        let mut message = Vec::new();
        let mut update = Vec::new();
        for _ in 0..config.rounds {
            message.push(make(&config.mlp_dims(2 * d, d)));
            update.push(make(&config.mlp_dims(2 * d, d)));
        }
        let readout = make(&config.mlp_dims(d, d));
        GnnParams {
            n_taxa,
            config,
            lift,
            message,
            update,
            readout,
        }
    }

    pub fn n_taxa(&self) -> usize {
        self.n_taxa
    }

    pub fn config(&self) -> GnnConfig {
        self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn mlps(&self) -> Vec<&Mlp> {
        let mut v = vec![&self.lift];
        for (m, u) in self.message.iter().zip(&self.update) {
            v.push(m);
            v.push(u);
        }
        v.push(&self.readout);
        v
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.mlps().into_iter().flat_map(|m| m.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.lift.tensors_mut();
        for (m, u) in self.message.iter_mut().zip(self.update.iter_mut()) {
            v.extend(m.tensors_mut());
            v.extend(u.tensors_mut());
        }
        v.extend(self.readout.tensors_mut());
        v
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundGnn {
        let mlps = self.mlps().into_iter().map(|m| m.bind(g, trainable)).collect();
        BoundGnn {
            n_taxa: self.n_taxa,
            mlps,
        }
    }

    /// Node and edge features as plain tensors.
    pub fn features(&self, tree: &TreeTopology) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let raw = super::dirichlet_embeddings(tree);
        let out = bound.forward(&mut g, tree, &raw)?;
        Ok((g.value(out.nodes).clone(), g.value(out.edges).clone()))
    }
}

/// Learned features of one topology on a graph.
#[derive(Debug, Clone, Copy)]
pub struct GnnOutput {
    /// n_nodes x D.
    pub nodes: Var,
    /// n_edges x D, in the tree's edge order.
    pub edges: Var,
}

/// [`GnnParams`] placed on a graph.
#[derive(Debug, Clone)]
pub struct BoundGnn {
    n_taxa: usize,
    mlps: Vec<BoundMlp>,
}

impl BoundGnn {
    pub fn forward(&self, g: &mut Graph, tree: &TreeTopology, raw: &Tensor) -> Result<GnnOutput> {
        if tree.n_leaves() != self.n_taxa || raw.shape() != (tree.n_nodes(), self.n_taxa) {
            return Err(Error::Dimension(format!(
                "encoder built for {} taxa got raw embeddings {:?} on a {}-taxon tree",
                self.n_taxa,
                raw.shape(),
                tree.n_leaves()
            )));
        }
        let n_nodes = tree.n_nodes();
        let (a_end, b_end): (Vec<usize>, Vec<usize>) = tree.edges().iter().copied().unzip();
        // Directed edges sorted so that the order of summation at each node
        // does not depend on how edges are stored.
        let mut directed: Vec<(usize, usize)> =
            tree.edges().iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        directed.sort_unstable();
        let (src, dst): (Vec<usize>, Vec<usize>) = directed.into_iter().unzip();

        let raw = g.constant(raw.clone());
        let mut f = self.mlps[0].forward(g, raw)?;
        let rounds = (self.mlps.len() - 2) / 2;
        let d = g.shape(f).1;
        for r in 0..rounds {
            let (msg, upd) = (&self.mlps[1 + 2 * r], &self.mlps[2 + 2 * r]);
            // f_u W_a + (f_v - f_u) W_b, projected per node before gathering.
            let pa = msg.project(g, f, 0)?;
            let pb = msg.project(g, f, d)?;
            let own = g.sub(pa, pb)?;
            let own = g.gather_rows(own, &src)?;
            let other = g.gather_rows(pb, &dst)?;
            let pre = g.add(own, other)?;
            let per_edge = msg.finish(g, pre)?;
            let m = g.scatter_add_rows(per_edge, &src, n_nodes)?;
            let pf = upd.project(g, f, 0)?;
            let pm = upd.project(g, m, d)?;
            let pre = g.add(pf, pm)?;
            f = upd.finish(g, pre)?;
        }
        let h = self.mlps.last().expect("readout").forward(g, f)?;
        let ha = g.gather_rows(h, &a_end)?;
        let hb = g.gather_rows(h, &b_end)?;
        let edges = g.add(ha, hb)?;
        Ok(GnnOutput { nodes: h, edges })
    }

    pub fn vars(&self) -> Vec<Var> {
        self.mlps.iter().flat_map(|m| m.vars().iter().copied()).collect()
    }

    /// Gradients in [`GnnParams::tensors`] order.
    pub fn grads(&self, g: &Graph, grads: &Gradients) -> Vec<Tensor> {
        self.mlps.iter().flat_map(|m| m.grads(g, grads)).collect()
    }
}
