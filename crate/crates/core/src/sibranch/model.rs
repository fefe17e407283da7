use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::phylo::{BranchLengths, TreeTopology};
use crate::tensor::{BoundMlp, Gradients, Graph, Mlp, Tensor, Var};
use crate::topoembed::{dirichlet_embeddings, BoundGnn, GnnConfig, GnnParams};

pub const LOG_SIGMA_MIN: f64 = -20.0;
pub const LOG_SIGMA_MAX: f64 = 5.0;
pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Sizes of the amortized branch length model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    /// Per-edge hidden variable dimension. Zero gives the plain diagonal
    /// lognormal model.
    pub hidden_dim: usize,
    pub mlp_width: usize,
    pub mlp_hidden_layers: usize,
    pub rounds: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 100,
            hidden_dim: 50,
            mlp_width: 100,
            mlp_hidden_layers: 2,
            rounds: 2,
        }
    }
}

impl ModelConfig {
    pub fn baseline() -> Self {
        ModelConfig {
            hidden_dim: 0,
            ..Self::default()
        }
    }

    pub fn gnn(&self) -> GnnConfig {
        GnnConfig {
            feature_dim: self.feature_dim,
            mlp_width: self.mlp_width,
            mlp_hidden_layers: self.mlp_hidden_layers,
            rounds: self.rounds,
        }
    }

    pub(crate) fn head_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(std::iter::repeat_n(self.mlp_width, self.mlp_hidden_layers));
        d.push(output);
        d
    }
}

/// Conditional lognormal branch length model `Q(q | tau, z)` with per-edge
/// location `MLP_mu(h_e ++ z_e)` and log-scale `MLP_sigma(h_e ++ z_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiBranchModel {
    config: ModelConfig,
    gnn: GnnParams,
    mu: Mlp,
    log_sigma: Mlp,
}

impl SiBranchModel {
    pub fn new<R: Rng + ?Sized>(n_taxa: usize, config: ModelConfig, rng: &mut R) -> Self {
        let gnn = GnnParams::new(n_taxa, config.gnn(), rng);
        let dims = config.head_dims(config.feature_dim + config.hidden_dim, 1);
        let mut mu = Mlp::new(&dims, rng);
        let mut log_sigma = Mlp::new(&dims, rng);
        // Start near typical branch lengths with moderate spread.
        mu.output_layer_mut().bias.data_mut()[0] = 0.1f64.ln();
        log_sigma.output_layer_mut().bias.data_mut()[0] = -1.0;
        SiBranchModel {
            config,
            gnn,
            mu,
            log_sigma,
        }
    }

    /// Every weight and bias zero: `mu = 0`, `log sigma = 0` everywhere.
    pub fn zeros(n_taxa: usize, config: ModelConfig) -> Self {
        let dims = config.head_dims(config.feature_dim + config.hidden_dim, 1);
        SiBranchModel {
            config,
            gnn: GnnParams::zeros(n_taxa, config.gnn()),
            mu: Mlp::zeros(&dims),
            log_sigma: Mlp::zeros(&dims),
        }
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn n_taxa(&self) -> usize {
        self.gnn.n_taxa()
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn gnn(&self) -> &GnnParams {
        &self.gnn
    }

    pub fn gnn_mut(&mut self) -> &mut GnnParams {
        &mut self.gnn
    }

    pub fn mu_head(&self) -> &Mlp {
        &self.mu
    }

    pub fn mu_head_mut(&mut self) -> &mut Mlp {
        &mut self.mu
    }

    pub fn log_sigma_head(&self) -> &Mlp {
        &self.log_sigma
    }

    pub fn log_sigma_head_mut(&mut self) -> &mut Mlp {
        &mut self.log_sigma
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.gnn.tensors();
        v.extend(self.mu.tensors());
        v.extend(self.log_sigma.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.gnn.tensors_mut();
        v.extend(self.mu.tensors_mut());
        v.extend(self.log_sigma.tensors_mut());
        v
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Whether the conditional ignores `z`: no hidden dimension, or all
    /// first-layer weights reading `z` are zero.
    pub fn is_z_independent(&self) -> bool {
        let d = self.config.feature_dim;
        [&self.mu, &self.log_sigma].iter().all(|m| {
            let w = &m.layers()[0].weight;
            (d..w.rows()).all(|r| w.row(r).iter().all(|&x| x == 0.0))
        })
    }

    /// Zeroes the first-layer weights that read `z`.
    pub fn zero_z_pathway(&mut self) {
        let d = self.config.feature_dim;
        for m in [&mut self.mu, &mut self.log_sigma] {
            let w = &mut m.layers_mut()[0].weight;
            for r in d..w.rows() {
                w.row_mut(r).fill(0.0);
            }
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundBranch {
        BoundBranch {
            gnn: self.gnn.bind(g, trainable),
            mu: self.mu.bind(g, trainable),
            log_sigma: self.log_sigma.bind(g, trainable),
            feature_dim: self.config.feature_dim,
            hidden_dim: self.config.hidden_dim,
        }
    }
}

/// Per-topology quantities shared by every `z` evaluated on that topology.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub n_edges: usize,
    /// Edge features, n_edges x D.
    pub edges: Var,
    mu_h: Var,
    sigma_h: Var,
}

/// [`SiBranchModel`] placed on a graph.
#[derive(Debug, Clone)]
pub struct BoundBranch {
    gnn: BoundGnn,
    mu: BoundMlp,
    log_sigma: BoundMlp,
    feature_dim: usize,
    hidden_dim: usize,
}

pub(crate) fn tile_index(n: usize, times: usize) -> Vec<usize> {
    (0..times).flat_map(|_| 0..n).collect()
}

impl BoundBranch {
    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn encode(&self, g: &mut Graph, tree: &TreeTopology) -> Result<Encoded> {
        let raw = dirichlet_embeddings(tree);
        let out = self.gnn.forward(g, tree, &raw)?;
        let mu_h = self.mu.project(g, out.edges, 0)?;
        let sigma_h = self.log_sigma.project(g, out.edges, 0)?;
        Ok(Encoded {
            n_edges: tree.n_edges(),
            edges: out.edges,
            mu_h,
            sigma_h,
        })
    }

    /// Location and clamped log-scale for stacked hidden variables. `z` has
    /// `m * n_edges` rows, block `j` holding `z^j` in edge order; outputs are
    /// columns of the same height.
    pub fn heads(&self, g: &mut Graph, enc: &Encoded, z: Var) -> Result<(Var, Var)> {
        let (rows, cols) = g.shape(z);
        if cols != self.hidden_dim || rows % enc.n_edges != 0 {
            return Err(Error::Dimension(format!(
                "hidden variables {:?} for {} edges of dimension {}",
                (rows, cols),
                enc.n_edges,
                self.hidden_dim
            )));
        }
        let idx = tile_index(enc.n_edges, rows / enc.n_edges);
        let mut out = [enc.mu_h, enc.sigma_h];
        for (slot, head) in out.iter_mut().zip([&self.mu, &self.log_sigma]) {
            let ph = g.gather_rows(*slot, &idx)?;
            let pz = head.project(g, z, self.feature_dim)?;
            let pre = g.add(ph, pz)?;
            *slot = head.finish(g, pre)?;
        }
        let ls = g.clamp(out[1], LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        Ok((out[0], ls))
    }

    /// Reparameterized draw `log q = mu + sigma * eps` at hidden variables
    /// `z0` (n_edges x H). Returns `log q` as a column.
    pub fn sample_log_q(&self, g: &mut Graph, enc: &Encoded, z0: Var, eps: &[f64]) -> Result<Var> {
        if eps.len() != enc.n_edges {
            return Err(Error::Dimension(format!("{} noise values for {} edges", eps.len(), enc.n_edges)));
        }
        let (mu, ls) = self.heads(g, enc, z0)?;
        let sigma = g.exp(ls);
        let e = g.constant(Tensor::column(eps.to_vec()));
        let step = g.mul(sigma, e)?;
        g.add(mu, step)
    }

    /// `log Q(q | tau, z^j)` for every block `j` of `z`, as an m x 1 column.
    pub fn log_density_blocks(&self, g: &mut Graph, enc: &Encoded, z: Var, log_q: Var) -> Result<Var> {
        let (mu, ls) = self.heads(g, enc, z)?;
        let m = g.shape(mu).0 / enc.n_edges;
        let lq = g.gather_rows(log_q, &tile_index(enc.n_edges, m))?;
        let a = g.sub(lq, mu)?;
        let neg = g.neg(ls);
        let inv = g.exp(neg);
        let u = g.mul(a, inv)?;
        let u2 = g.square(u);
        let t = g.scale(u2, -0.5);
        let t = g.sub(t, ls)?;
        let t = g.sub(t, lq)?;
        let t = g.add_scalar(t, -HALF_LN_2PI);
        let t = g.reshape(t, m, enc.n_edges)?;
        Ok(g.row_sum(t))
    }

    /// Gradients in [`SiBranchModel::tensors`] order.
    pub fn grads(&self, g: &Graph, grads: &Gradients) -> Vec<Tensor> {
        let mut v = self.gnn.grads(g, grads);
        v.extend(self.mu.grads(g, grads));
        v.extend(self.log_sigma.grads(g, grads));
        v
    }
}

/// Standard normal hidden variables, one row per edge.
pub fn sample_mixing<R: Rng + ?Sized>(n_edges: usize, hidden_dim: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(n_edges, hidden_dim, |_, _| rng.sample(StandardNormal))
}

pub fn mixing_log_density(z: &Tensor) -> f64 {
    z.data().iter().map(|&x| -0.5 * (x * x) - HALF_LN_2PI).sum()
}

/// Block sums of the standard normal log density of stacked `z`
/// (`m * n_edges` rows), as an m x 1 column.
pub(crate) fn mixing_log_density_blocks(g: &mut Graph, z: Var, m: usize) -> Result<Var> {
    let (rows, cols) = g.shape(z);
    let sq = g.square(z);
    let t = g.scale(sq, -0.5);
    let t = g.add_scalar(t, -HALF_LN_2PI);
    let t = g.reshape(t, m, rows * cols / m.max(1))?;
    Ok(g.row_sum(t))
}

pub(crate) fn check_positive(q: &BranchLengths) -> Result<()> {
    match q.values().iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        Some(&bad) => Err(Error::InvalidBranchLength(bad)),
        None => Ok(()),
    }
}

pub(crate) fn check_hidden(z: &Tensor, n_edges: usize, hidden_dim: usize) -> Result<()> {
    if z.shape() != (n_edges, hidden_dim) {
        return Err(Error::Dimension(format!(
            "hidden variables {:?}, expected {:?}",
            z.shape(),
            (n_edges, hidden_dim)
        )));
    }
    Ok(())
}
