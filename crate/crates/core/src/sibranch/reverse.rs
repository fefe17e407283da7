use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{BoundMlp, Gradients, Graph, Mlp, Tensor, Var};

use super::model::{tile_index, Encoded, ModelConfig, HALF_LN_2PI, LOG_SIGMA_MAX, LOG_SIGMA_MIN};

/// Diagonal normal `R(z | tau, q)` over per-edge hidden variables, with mean
/// `MLP_mu(h_e ++ log q_e)` and log-std `MLP_sigma(h_e ++ log q_e)`. The edge
/// features come from the branch model's encoder. Raw lengths sit in a narrow
/// band near zero, where the network can barely tell them apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseModel {
    feature_dim: usize,
    hidden_dim: usize,
    mu: Mlp,
    log_sigma: Mlp,
}

impl ReverseModel {
    /// Random hidden layers with zeroed output layers, so training starts
    /// from the mixing distribution.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let dims = config.head_dims(config.feature_dim + 1, config.hidden_dim);
        let mut mu = Mlp::new(&dims, rng);
        let mut log_sigma = Mlp::new(&dims, rng);
        for m in [&mut mu, &mut log_sigma] {
            let out = m.output_layer_mut();
            out.weight.data_mut().fill(0.0);
            out.bias.data_mut().fill(0.0);
        }
        ReverseModel {
            feature_dim: config.feature_dim,
            hidden_dim: config.hidden_dim,
            mu,
            log_sigma,
        }
    }

    /// All-zero weights: the standard normal regardless of input.
    pub fn zeros(config: ModelConfig) -> Self {
        let dims = config.head_dims(config.feature_dim + 1, config.hidden_dim);
        ReverseModel {
            feature_dim: config.feature_dim,
            hidden_dim: config.hidden_dim,
            mu: Mlp::zeros(&dims),
            log_sigma: Mlp::zeros(&dims),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
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
        let mut v = self.mu.tensors();
        v.extend(self.log_sigma.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.mu.tensors_mut();
        v.extend(self.log_sigma.tensors_mut());
        v
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundReverse {
        BoundReverse {
            mu: self.mu.bind(g, trainable),
            log_sigma: self.log_sigma.bind(g, trainable),
            feature_dim: self.feature_dim,
        }
    }
}

/// Per-edge parameters of `R` for one `(tau, q)`, each n_edges x H.
#[derive(Debug, Clone, Copy)]
pub struct ReverseParams {
    pub mu: Var,
    pub log_sigma: Var,
    n_edges: usize,
}

impl ReverseParams {
    /// The same values as constants, for evaluating `log R` without a
    /// gradient through its parameters.
    pub fn detached(&self, g: &mut Graph) -> ReverseParams {
        let mu = g.constant(g.value(self.mu).clone());
        let log_sigma = g.constant(g.value(self.log_sigma).clone());
        ReverseParams { mu, log_sigma, n_edges: self.n_edges }
    }
}

#[derive(Debug, Clone)]
pub struct BoundReverse {
    mu: BoundMlp,
    log_sigma: BoundMlp,
    feature_dim: usize,
}

impl BoundReverse {
    /// `log_q` is the column of log branch lengths.
    pub fn params(&self, g: &mut Graph, enc: &Encoded, log_q: Var) -> Result<ReverseParams> {
        if g.shape(log_q) != (enc.n_edges, 1) || g.shape(enc.edges).1 != self.feature_dim {
            return Err(Error::Dimension("reverse model input does not match the encoder".into()));
        }
        let mut out = Vec::with_capacity(2);
        for head in [&self.mu, &self.log_sigma] {
            let ph = head.project(g, enc.edges, 0)?;
            let pq = head.project(g, log_q, self.feature_dim)?;
            let pre = g.add(ph, pq)?;
            out.push(head.finish(g, pre)?);
        }
        let log_sigma = g.clamp(out[1], LOG_SIGMA_MIN, LOG_SIGMA_MAX);
        Ok(ReverseParams {
            mu: out[0],
            log_sigma,
            n_edges: enc.n_edges,
        })
    }

    /// Reparameterized draws `z = mu + sigma * eps` for stacked noise
    /// (`m * n_edges` rows).
    pub fn sample(&self, g: &mut Graph, p: &ReverseParams, eps: Tensor) -> Result<Var> {
        let m = eps.rows() / p.n_edges;
        if eps.rows() != m * p.n_edges || eps.cols() != g.shape(p.mu).1 {
            return Err(Error::Dimension(format!("reverse noise {:?}", eps.shape())));
        }
        let idx = tile_index(p.n_edges, m);
        let mu = g.gather_rows(p.mu, &idx)?;
        let sigma = g.exp(p.log_sigma);
        let sigma = g.gather_rows(sigma, &idx)?;
        let e = g.constant(eps);
        let step = g.mul(sigma, e)?;
        g.add(mu, step)
    }

    /// Block sums of `log R(z^j | tau, q)`, as an m x 1 column.
    pub fn log_density_blocks(&self, g: &mut Graph, p: &ReverseParams, z: Var) -> Result<Var> {
        let (rows, cols) = g.shape(z);
        let m = rows / p.n_edges;
        if rows != m * p.n_edges || cols != g.shape(p.mu).1 {
            return Err(Error::Dimension(format!("hidden variables {:?}", (rows, cols))));
        }
        let idx = tile_index(p.n_edges, m);
        let mu = g.gather_rows(p.mu, &idx)?;
        let ls = g.gather_rows(p.log_sigma, &idx)?;
        let a = g.sub(z, mu)?;
        let neg = g.neg(ls);
        let inv = g.exp(neg);
        let u = g.mul(a, inv)?;
        // Same operation order as the mixing density, so that a standard
        // normal R reproduces it bit for bit.
        let u2 = g.square(u);
        let t = g.scale(u2, -0.5);
        let t = g.sub(t, ls)?;
        let t = g.add_scalar(t, -HALF_LN_2PI);
        let t = g.reshape(t, m, rows * cols / m.max(1))?;
        Ok(g.row_sum(t))
    }

    pub fn grads(&self, g: &Graph, grads: &Gradients) -> Vec<Tensor> {
        let mut v = self.mu.grads(g, grads);
        v.extend(self.log_sigma.grads(g, grads));
        v
    }
}
