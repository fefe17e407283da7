use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sivbpi::bounds::{estimate, BoundConfig, Objective, Variational};
use sivbpi::phylo::simulate::{default_names, random_branch_lengths, simulate_alignment};
use sivbpi::topoembed::dirichlet_embeddings;
use sivbpi::{AnnealedTarget, ModelConfig, SbnSupport, TaxonSet, TreeTopology};

struct Fixture {
    tree: TreeTopology,
    q: sivbpi::BranchLengths,
    target: AnnealedTarget,
    support: SbnSupport,
}

fn fixture(n: usize, sites: usize) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tree = TreeTopology::random(n, &mut rng).unwrap();
    let q = random_branch_lengths(&tree, 0.1, &mut rng).unwrap();
    let names = default_names(n);
    let aln = simulate_alignment(&tree, &q, &names, sites, &mut rng).unwrap();
    let target = AnnealedTarget::new(&aln).unwrap();
    let trees: Vec<TreeTopology> = (0..50).map(|_| TreeTopology::random(n, &mut rng).unwrap()).collect();
    let support = SbnSupport::from_trees(TaxonSet::new(names).unwrap(), &trees).unwrap();
    Fixture { tree, q, target, support }
}

fn likelihood(c: &mut Criterion) {
    let f = fixture(8, 500);
    c.bench_function("pruning_gradient_8x500", |b| {
        b.iter(|| f.target.log_density_grad(black_box(&f.tree), black_box(&f.q), 1.0).unwrap())
    });
    c.bench_function("dirichlet_embeddings_8", |b| b.iter(|| dirichlet_embeddings(black_box(&f.tree))));
}

fn bounds(c: &mut Criterion) {
    let f = fixture(8, 500);
    let mut group = c.benchmark_group("bound_step_k10");
    group.sample_size(10);
    for (objective, j) in [(Objective::Mlb, 0), (Objective::Msilb, 50), (Objective::Miwlb, 50)] {
        let model = Variational::init(f.support.clone(), objective, ModelConfig::default(), 3);
        let cfg = BoundConfig { objective, k: 10, j, lambda: 1.0 };
        group.bench_function(objective.to_string(), |b| {
            let mut step = 0;
            b.iter(|| {
                step += 1;
                estimate(&model, &f.target, cfg, 7, step, true).unwrap()
            })
        });
    }
    group.finish();
}

fn sbn(c: &mut Criterion) {
    let f = fixture(8, 10);
    let model = sivbpi::SbnModel::new(f.support.clone());
    let scorer = model.scorer();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("sbn_sample_and_score_8", |b| {
        b.iter(|| {
            let t = scorer.sample(&mut rng);
            scorer.log_prob_unrooted_grad(&t).unwrap()
        })
    });
}

criterion_group!(benches, likelihood, bounds, sbn);
criterion_main!(benches);
