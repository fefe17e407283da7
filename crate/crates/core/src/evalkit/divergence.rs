use std::str::FromStr;

use crate::error::{Error, Result};
use crate::phylo::{BranchLengths, TreeTopology};

pub const N_BINS: usize = 100;
const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    Tv,
    /// `KL(variational || reference)`.
    Kl,
}

impl FromStr for Divergence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tv" => Ok(Divergence::Tv),
            "kl" => Ok(Divergence::Kl),
            other => Err(Error::InvalidArgument(format!("unknown divergence `{other}` (tv or kl)"))),
        }
    }
}

fn counts(xs: &[f64], lo: f64, width: f64) -> Vec<u64> {
    let mut h = vec![0u64; N_BINS];
    for &x in xs {
        let b = if width > 0.0 { ((x - lo) / width) as usize } else { 0 };
        h[b.min(N_BINS - 1)] += 1;
    }
    h
}

fn divergence(a: &[f64], b: &[f64], metric: Divergence) -> f64 {
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / N_BINS as f64;
    let (ca, cb) = (counts(a, lo, width), counts(b, lo, width));
    let (na, nb) = (a.len() as u128, b.len() as u128);
    match metric {
        // Integer numerator, so identical and disjoint histograms come out
        // exactly 0 and 1.
        Divergence::Tv => {
            let diff: u128 = ca.iter().zip(&cb).map(|(&x, &y)| (x as u128 * nb).abs_diff(y as u128 * na)).sum();
            diff as f64 / (2 * na * nb) as f64
        }
        Divergence::Kl => ca
            .iter()
            .zip(&cb)
            .filter(|(x, _)| **x > 0)
            .map(|(&x, &y)| {
                let p = x as f64 / na as f64;
                let r = y as f64 / nb as f64;
                p * (p.max(KL_FLOOR) / r.max(KL_FLOOR)).ln()
            })
            .sum::<f64>()
            .max(0.0),
    }
}

/// Per-edge divergence between histogram densities of `log q`, in `tree`'s
/// edge order. Reference edges are matched by the split they induce.
pub fn edge_divergences(
    tree: &TreeTopology,
    samples: &[BranchLengths],
    reference_tree: &TreeTopology,
    reference: &[BranchLengths],
    metric: Divergence,
) -> Result<Vec<f64>> {
    if samples.is_empty() || reference.is_empty() {
        return Err(Error::Empty("divergence needs samples on both sides".into()));
    }
    let e = tree.n_edges();
    if samples.iter().any(|q| q.len() != e) || reference.iter().any(|q| q.len() != reference_tree.n_edges()) {
        return Err(Error::Dimension("branch length vectors do not match their trees".into()));
    }
    let ref_splits = reference_tree.splits();
    let logs = |set: &[BranchLengths], i: usize| -> Result<Vec<f64>> {
        set.iter()
            .map(|q| {
                let x = q.values()[i];
                if x > 0.0 && x.is_finite() {
                    Ok(x.ln())
                } else {
                    Err(Error::InvalidBranchLength(x))
                }
            })
            .collect()
    };
    tree.splits()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let k = ref_splits
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| Error::InvalidArgument(format!("split {} has no reference edge", s.to_hex())))?;
            Ok(divergence(&logs(samples, i)?, &logs(reference, k)?, metric))
        })
        .collect()
}

/// `sum_e D(Q(q_e | tau) || P(q_e | tau, Y))` over the edges of `tree`.
pub fn branch_marginal_divergence(
    tree: &TreeTopology,
    samples: &[BranchLengths],
    reference_tree: &TreeTopology,
    reference: &[BranchLengths],
    metric: Divergence,
) -> Result<f64> {
    Ok(edge_divergences(tree, samples, reference_tree, reference, metric)?.iter().sum())
}
