//! Sequence simulation under JC69 along a fixed tree.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::jc::{self, N_STATES};
use super::{BranchLengths, TreeTopology};
use crate::error::{Error, Result};
use crate::seqio::alignment::Alignment;

const NUCLEOTIDES: [u8; N_STATES] = *b"ACGT";

fn draw_state<R: Rng + ?Sized>(probs: &[f64; N_STATES], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    N_STATES - 1
}

/// Draws `n_sites` i.i.d. columns: the root state from the stationary
/// distribution, then each child state from `P(q_e)` given its parent.
pub fn simulate_alignment<R: Rng + ?Sized>(
    tree: &TreeTopology,
    q: &BranchLengths,
    names: &[String],
    n_sites: usize,
    rng: &mut R,
) -> Result<Alignment> {
    if names.len() != tree.n_leaves() {
        return Err(Error::Dimension("one name per leaf required".into()));
    }
    if q.len() != tree.n_edges() {
        return Err(Error::Dimension("one branch length per edge required".into()));
    }
    if n_sites == 0 {
        return Err(Error::InvalidArgument("at least one site required".into()));
    }
    let root = tree.n_leaves();
    let order = tree.postorder(root);
    let mut transitions = Vec::with_capacity(q.len());
    for &t in q.values() {
        transitions.push(jc::transition(t)?);
    }
    let mut rows = vec![Vec::with_capacity(n_sites); tree.n_leaves()];
    let mut state = vec![0usize; tree.n_nodes()];
    for _ in 0..n_sites {
        for &(v, parent) in order.iter().rev() {
            state[v] = match parent {
                None => draw_state(&jc::STATIONARY, rng),
                Some(u) => {
                    let e = tree.edge_between(u, v).expect("adjacent");
                    draw_state(&transitions[e][state[u]], rng)
                }
            };
        }
        for (leaf, row) in rows.iter_mut().enumerate() {
            row.push(NUCLEOTIDES[state[leaf]]);
        }
    }
    Alignment::new(names.to_vec(), rows)
}

/// I.i.d. exponential branch lengths with the given mean.
pub fn random_branch_lengths<R: Rng + ?Sized>(
    tree: &TreeTopology,
    mean: f64,
    rng: &mut R,
) -> Result<BranchLengths> {
    let exp = Exp::new(1.0 / mean)
        .map_err(|_| Error::InvalidArgument(format!("bad branch length mean {mean}")))?;
    Ok(BranchLengths::new(
        (0..tree.n_edges()).map(|_| exp.sample(rng)).collect(),
    ))
}

/// Default taxon names `t1..tN`.
pub fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("t{i}")).collect()
}
