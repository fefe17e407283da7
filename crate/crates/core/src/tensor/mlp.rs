use rand::Rng;

use crate::error::{Error, Result};

use super::array::Tensor;
use super::graph::{Gradients, Graph, Var};

/// Affine layer `x W + b` with `W` of shape in x out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Multi-layer perceptron with ELU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))` for weights
    /// and biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0].max(1) as f64).sqrt();
                Linear {
                    weight: Tensor::from_fn(w[0], w[1], |_, _| rng.random_range(-bound..bound)),
                    bias: Tensor::from_fn(1, w[1], |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(w[0], w[1]),
                bias: Tensor::zeros(1, w[1]),
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("MLP without layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weight.cols()) {
                return Err(Error::Dimension(format!("layer {i} bias does not match its weight")));
            }
            if i > 0 && layers[i - 1].weight.cols() != l.weight.rows() {
                return Err(Error::Dimension(format!("layer {i} does not chain")));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weight.rows()];
        d.extend(self.layers.iter().map(|l| l.weight.cols()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.cols()
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn output_layer_mut(&mut self) -> &mut Linear {
        self.layers.last_mut().expect("nonempty")
    }

    /// Parameter tensors in a fixed order (weight, bias per layer).
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Places the parameters on a graph, as trainable leaves or constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        let mut vars = Vec::with_capacity(2 * self.layers.len());
        for t in self.tensors() {
            vars.push(if trainable { g.param(t.clone()) } else { g.constant(t.clone()) });
        }
        BoundMlp { vars }
    }
}

/// An [`Mlp`] whose parameters live on a graph.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<Var>,
}

impl BoundMlp {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn n_layers(&self) -> usize {
        self.vars.len() / 2
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let pre = g.matmul(x, self.vars[0])?;
        self.finish(g, pre)
    }

    /// Contribution `x W[start..start + cols(x), :]` of one column block of
    /// the input to the first layer's pre-activation. Summing the blocks and
    /// calling [`finish`](Self::finish) equals `forward` on the concatenated
    /// input.
    pub fn project(&self, g: &mut Graph, x: Var, start: usize) -> Result<Var> {
        let w = g.slice_rows(self.vars[0], start, g.shape(x).1)?;
        g.matmul(x, w)
    }

    /// Runs the network from the first layer's pre-activation (bias not yet
    /// added).
    pub fn finish(&self, g: &mut Graph, pre: Var) -> Result<Var> {
        let mut h = g.add_bias(pre, self.vars[1])?;
        for l in 1..self.n_layers() {
            h = g.elu(h);
            h = g.matmul(h, self.vars[2 * l])?;
            h = g.add_bias(h, self.vars[2 * l + 1])?;
        }
        Ok(h)
    }

    /// Gradients in [`Mlp::tensors`] order, zeros where the output did not
    /// depend on a parameter.
    pub fn grads(&self, g: &Graph, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zeros(v, g.shape(v))).collect()
    }
}
