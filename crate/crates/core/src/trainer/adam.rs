use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for one flat parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn update(&mut self, offset: usize, params: &mut [f64], grads: &[f64], lr: f64) {
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p += lr * mh / (vh.sqrt() + EPSILON);
        }
    }
}

/// One bias-corrected Adam step in the ascent direction.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    state.step += 1;
    state.update(0, params, grads, lr);
    Ok(())
}

/// [`adam_step`] over tensors laid end to end.
pub fn adam_step_tensors(params: Vec<&mut Tensor>, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    let total: usize = params.iter().map(|t| t.len()).sum();
    if params.len() != grads.len()
        || total != state.len()
        || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::Dimension("gradient tensors do not match the parameters".into()));
    }
    state.step += 1;
    let mut offset = 0;
    for (p, g) in params.into_iter().zip(grads) {
        let n = p.len();
        state.update(offset, p.data_mut(), g.data(), lr);
        offset += n;
    }
    Ok(())
}
