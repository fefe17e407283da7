use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::phylo::simulate::{default_names, random_branch_lengths, simulate_alignment};
use crate::phylo::{AnnealedTarget, TreeTopology};
use crate::sbn::SbnSupport;
use crate::seqio::{Alignment, TaxonSet};
use crate::sibranch::ModelConfig;

/// Simulated alignment on a random tree with every topology in the support.
pub(crate) fn instance(n: usize, sites: usize, seed: u64) -> (Alignment, AnnealedTarget, SbnSupport) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = TreeTopology::random(n, &mut rng).unwrap();
    let q = random_branch_lengths(&tree, 0.1, &mut rng).unwrap();
    let names = default_names(n);
    let aln = simulate_alignment(&tree, &q, &names, sites, &mut rng).unwrap();
    let target = AnnealedTarget::new(&aln).unwrap();
    let support =
        SbnSupport::from_trees(TaxonSet::new(names).unwrap(), &TreeTopology::enumerate_all(n).unwrap()).unwrap();
    (aln, target, support)
}

pub(crate) fn tiny_config(hidden: usize) -> ModelConfig {
    ModelConfig {
        feature_dim: 5,
        hidden_dim: hidden,
        mlp_width: 6,
        mlp_hidden_layers: 2,
        rounds: 2,
    }
}
