use crate::error::{Error, Result};
use crate::tensor::logmeanexp;

/// Leave-one-out learning signals `l_k = L - L_{-k}`, where `L_{-k}` is the
/// bound with `f_k` replaced by the arithmetic mean of the other `f_j`.
pub fn vimco_signals(f: &[f64]) -> Result<Vec<f64>> {
    let k = f.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("VIMCO needs at least 2 particles, got {k}")));
    }
    let total = logmeanexp(f);
    let sum: f64 = f.iter().sum();
    let mut g = f.to_vec();
    Ok((0..k)
        .map(|i| {
            let saved = g[i];
            g[i] = (sum - saved) / (k - 1) as f64;
            let loo = logmeanexp(&g);
            g[i] = saved;
            total - loo
        })
        .collect())
}

/// VIMCO estimate of the topology-logit gradient of the bound:
/// `sum_k (l_k - w_k) grad log Q(tau^k)`. The `-w_k` part is the bound's
/// direct dependence on `log Q(tau^k)` through `f_k`.
pub fn grad_topology_vimco(f: &[f64], scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    if scores.len() != f.len() {
        return Err(Error::Dimension(format!("{} scores for {} particles", scores.len(), f.len())));
    }
    let signals = vimco_signals(f)?;
    let total = logmeanexp(f);
    let k = f.len() as f64;
    let n = scores[0].len();
    let mut grad = vec![0.0; n];
    for ((s, &fk), &l) in scores.iter().zip(f).zip(&signals) {
        if s.len() != n {
            return Err(Error::Dimension("score vectors differ in length".into()));
        }
        let c = l - (fk - total).exp() / k;
        for (o, x) in grad.iter_mut().zip(s) {
            *o += c * x;
        }
    }
    Ok(grad)
}
