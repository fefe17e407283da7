//! Closed-form `log P(Y | tau)` for tiny instances.
//!
//! Under JC69 every transition probability is affine in `x = exp(-4t/3)`, so
//! the likelihood is a polynomial in the per-edge `x_e` with degree at most
//! the number of sites in each variable. Under an `Exp(rate)` prior,
//! `E[x^m] = rate / (rate + 4m/3)`, and the integral over branch lengths is a
//! finite sum.

use super::jc::N_STATES;
use super::likelihood::SitePatterns;
use super::TreeTopology;
use crate::error::{Error, Result};

const MAX_TERMS: usize = 5_000_000;

/// Multilinear site polynomial: coefficient of `prod_{e in S} x_e` at bitmask `S`.
fn site_polynomial(patterns: &SitePatterns, tree: &TreeTopology, p: usize) -> Vec<f64> {
    let n = tree.n_leaves();
    let n_int = tree.n_nodes() - n;
    let n_edges = tree.n_edges();
    let mut poly = vec![0.0; 1 << n_edges];
    let mut states = vec![0usize; n_int];
    let total = N_STATES.pow(n_int as u32);
    for code in 0..total {
        let mut c = code;
        for s in states.iter_mut() {
            *s = c % N_STATES;
            c /= N_STATES;
        }
        // Each edge contributes a + b x.
        let mut factors = Vec::with_capacity(n_edges);
        for &(u, v) in tree.edges() {
            let (a, b) = match (tree.is_leaf(u), tree.is_leaf(v)) {
                (false, false) => {
                    if states[u - n] == states[v - n] {
                        (0.25, 0.75)
                    } else {
                        (0.25, -0.25)
                    }
                }
                (leaf_u, _) => {
                    let (leaf, int) = if leaf_u { (u, v) } else { (v, u) };
                    let s_int = states[int - n];
                    let partial = patterns.leaf_partial(leaf, p);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for (s, &w) in partial.iter().enumerate() {
                        a += 0.25 * w;
                        b += if s == s_int { 0.75 * w } else { -0.25 * w };
                    }
                    (a, b)
                }
            };
            factors.push((a, b));
        }
        let mut expansion = vec![0.0; 1 << n_edges];
        expansion[0] = 0.25;
        for (e, &(a, b)) in factors.iter().enumerate() {
            for mask in (0..1usize << e).rev() {
                let x = expansion[mask];
                expansion[mask | 1 << e] = x * b;
                expansion[mask] = x * a;
            }
        }
        for (o, x) in poly.iter_mut().zip(&expansion) {
            *o += x;
        }
    }
    poly
}

/// `log P(Y | tau) = log ∫ P(Y | tau, q) prod_e Exp(q_e; rate) dq`, exactly.
/// Refuses instances whose expanded polynomial would be too large.
pub fn exact_log_marginal_likelihood(patterns: &SitePatterns, tree: &TreeTopology, rate: f64) -> Result<f64> {
    if tree.n_leaves() != patterns.n_taxa() {
        return Err(Error::Dimension("tree and alignment disagree on the taxon count".into()));
    }
    let counts = patterns.counts();
    let sites: usize = counts.iter().map(|&c| c as usize).sum();
    let e = tree.n_edges();
    let base = sites + 1;
    let size = (0..e).try_fold(1usize, |acc, _| acc.checked_mul(base).filter(|&s| s <= MAX_TERMS));
    let size = size.ok_or_else(|| {
        Error::InvalidArgument(format!("{sites} sites on {e} edges is too large for the exact marginal"))
    })?;
    let stride: Vec<usize> = (0..e).map(|i| base.pow(i as u32)).collect();
    let mut poly = vec![0.0; size];
    poly[0] = 1.0;
    let mut degree = 0;
    for (p, &count) in counts.iter().enumerate() {
        let site = site_polynomial(patterns, tree, p);
        for _ in 0..count as usize {
            let mut next = vec![0.0; size];
            for (idx, &c) in poly.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                // Skip entries whose per-edge degree is already at the bound.
                if (0..e).any(|i| (idx / stride[i]) % base > degree) {
                    continue;
                }
                for (mask, &s) in site.iter().enumerate() {
                    let mut j = idx;
                    for (i, st) in stride.iter().enumerate() {
                        if mask >> i & 1 == 1 {
                            j += st;
                        }
                    }
                    next[j] += c * s;
                }
            }
            poly = next;
            degree += 1;
        }
    }
    let moments: Vec<f64> = (0..base).map(|m| rate / (rate + 4.0 * m as f64 / 3.0)).collect();
    let mut total = 0.0;
    for (idx, &c) in poly.iter().enumerate() {
        if c != 0.0 {
            let w: f64 = stride.iter().map(|&st| moments[(idx / st) % base]).product();
            total += c * w;
        }
    }
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("exact marginal lost all precision".into()));
    }
    Ok(total.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phylo::BranchLengths;
    use crate::seqio::{Alignment, AlignmentFormat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn matches_prior_monte_carlo() {
        let aln = Alignment::parse(">a\nAC\n>b\nAG\n>c\nTC\n>d\nAC\n", AlignmentFormat::Fasta).unwrap();
        let pats = SitePatterns::compress(&aln);
        let tree = TreeTopology::enumerate_all(4).unwrap().remove(1);
        let exact = exact_log_marginal_likelihood(&pats, &tree, 10.0).unwrap().exp();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prior = Exp::new(10.0).unwrap();
        let n = 400_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let q = BranchLengths::new((0..5).map(|_| prior.sample(&mut rng)).collect());
            let l = pats.log_likelihood(&tree, &q).unwrap().exp();
            s += l;
            s2 += l * l;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn all_gaps_integrate_to_one_and_large_inputs_are_refused() {
        let aln = Alignment::parse(">a\n-\n>b\n-\n>c\n-\n", AlignmentFormat::Fasta).unwrap();
        let pats = SitePatterns::compress(&aln);
        let v = exact_log_marginal_likelihood(&pats, &TreeTopology::star3(), 10.0).unwrap();
        assert!(v.abs() < 1e-14);
        let long = format!(">a\n{0}\n>b\n{0}\n>c\n{0}\n>d\n{0}\n>e\n{0}\n", "ACGT".repeat(50));
        let aln = Alignment::parse(&long, AlignmentFormat::Fasta).unwrap();
        let pats = SitePatterns::compress(&aln);
        let t = TreeTopology::enumerate_all(5).unwrap().remove(0);
        assert!(exact_log_marginal_likelihood(&pats, &t, 10.0).is_err());
    }
}
