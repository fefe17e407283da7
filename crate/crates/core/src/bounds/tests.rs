use super::*;
use crate::testutil::{instance, tiny_config};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn models(seed: u64) -> (AnnealedTarget, Variational) {
    let (_, target, support) = instance(4, 20, seed);
    let model = Variational::init(support, Objective::Miwlb, tiny_config(3), seed);
    (target, model)
}

fn cfg(objective: Objective, k: usize, j: usize) -> BoundConfig {
    BoundConfig { objective, k, j, lambda: 0.7 }
}

#[test]
fn annealing_values_are_exact() {
    assert_eq!(annealing_schedule(0), 0.001);
    assert_eq!(annealing_schedule(50_000), 0.501);
    assert_eq!(annealing_schedule(100_000), 1.0);
    assert_eq!(annealing_schedule(250_000), 1.0);
    assert_eq!(annealing_schedule_with(2_500, 5_000), 0.501);
}

#[test]
fn objective_names_round_trip() {
    for o in [Objective::Mlb, Objective::Msilb, Objective::Miwlb] {
        assert_eq!(o.to_string().parse::<Objective>().unwrap(), o);
    }
    assert_eq!("MLB".parse::<Objective>().unwrap(), Objective::Mlb);
    assert!("elbo".parse::<Objective>().is_err());
}

#[test]
fn z_independent_msilb_equals_mlb_bitwise() {
    let (target, mut model) = models(1);
    model.branch.zero_z_pathway();
    let mlb = estimate(&model, &target, cfg(Objective::Mlb, 4, 0), 5, 9, false).unwrap();
    for j in [1, 7] {
        let si = estimate(&model, &target, cfg(Objective::Msilb, 4, j), 5, 9, false).unwrap();
        assert_eq!(si.value.to_bits(), mlb.value.to_bits());
        for (a, b) in si.log_weights.iter().zip(&mlb.log_weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn zero_reverse_miwlb_equals_msilb_bitwise() {
    let (target, mut model) = models(2);
    model.reverse = Some(ReverseModel::zeros(tiny_config(3)));
    for j in [0, 1, 6] {
        let a = estimate(&model, &target, cfg(Objective::Msilb, 3, j), 11, 2, true).unwrap();
        let b = estimate(&model, &target, cfg(Objective::Miwlb, 3, j), 11, 2, true).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.log_weights, b.log_weights);
        assert_eq!(a.grads.as_ref().unwrap().sbn, b.grads.as_ref().unwrap().sbn);
    }
}

#[test]
fn single_particle_without_extras_is_the_augmented_elbo_term() {
    let (target, model) = models(3);
    let est = estimate(&model, &target, cfg(Objective::Msilb, 1, 0), 4, 0, false).unwrap();
    let p = &est.particles[0];
    let cond = model.branch.conditional_log_density(&p.tree, &p.z0, &p.q).unwrap();
    let lq_tree = model.sbn.log_prob_unrooted(&p.tree).unwrap();
    let direct = target.log_likelihood(&p.tree, &p.q).unwrap() * 0.7 + target.log_prior(&p.tree, &p.q).unwrap()
        - lq_tree
        - cond;
    assert!((est.value - direct).abs() < 1e-10 * direct.abs().max(1.0));
    assert_eq!(est.value, p.log_weight);
}

#[test]
fn value_is_reproducible_and_order_free() {
    let (target, model) = models(4);
    let est = estimate(&model, &target, cfg(Objective::Miwlb, 6, 3), 1, 1, false).unwrap();
    assert_eq!(est.value, multi_sample_bound(&est.log_weights));
    let again = estimate(&model, &target, cfg(Objective::Miwlb, 6, 3), 1, 1, false).unwrap();
    assert_eq!(est, again);
    let mut rev = est.log_weights.clone();
    rev.reverse();
    rev.swap(0, 3);
    assert_eq!(multi_sample_bound(&rev).to_bits(), est.value.to_bits());
    let lse = crate::tensor::logsumexp(&est.log_weights) - (6f64).ln();
    assert!((lse - est.value).abs() < 1e-12 * lse.abs());
}

#[test]
fn invalid_configurations_are_rejected() {
    let (target, model) = models(5);
    assert!(estimate(&model, &target, cfg(Objective::Mlb, 3, 0), 1, 0, false).is_err());
    assert!(estimate(&model, &target, cfg(Objective::Msilb, 0, 3), 1, 0, false).is_err());
    assert!(estimate(&model, &target, cfg(Objective::Msilb, 1, 3), 1, 0, true).is_err());
    let mut bad = cfg(Objective::Msilb, 2, 3);
    bad.lambda = 0.0;
    assert!(estimate(&model, &target, bad, 1, 0, false).is_err());
    let mut no_rev = model.clone();
    no_rev.reverse = None;
    assert!(estimate(&no_rev, &target, cfg(Objective::Miwlb, 2, 1), 1, 0, false).is_err());
    let (_, other_target, _) = instance(5, 10, 1);
    assert!(estimate(&model, &other_target, cfg(Objective::Msilb, 2, 1), 1, 0, false).is_err());
}

#[test]
fn runaway_branch_lengths_abort_with_diagnostic() {
    let (target, mut model) = models(6);
    model.branch.mu_head_mut().output_layer_mut().bias.data_mut()[0] = 1000.0;
    let err = estimate(&model, &target, cfg(Objective::Msilb, 2, 1), 1, 17, false).unwrap_err();
    match err {
        Error::NonFinite { iteration, detail } => {
            assert_eq!(iteration, 17);
            assert!(detail.contains("particle"));
        }
        other => panic!("unexpected {other}"),
    }
}

/// Central differences of the bound value (fixed streams) against the
/// reverse-mode gradient for a spread of branch and reverse parameters.
fn check_gradients(objective: Objective, j: usize, seed: u64) {
    let (target, mut model) = models(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Some(rev) = model.reverse.as_mut() {
        for t in rev.tensors_mut() {
            for x in t.data_mut() {
                *x += 0.1 * rand::Rng::random_range(&mut rng, -1.0..1.0);
            }
        }
    }
    let c = cfg(objective, 3, j);
    let est = estimate(&model, &target, c, seed, 3, true).unwrap();
    let grads = est.grads.unwrap();
    let value = |m: &Variational| estimate(m, &target, c, seed, 3, false).unwrap().value;
    let h = 1e-6;
    let close = |a: f64, fd: f64| (a - fd).abs() <= 1e-4 * fd.abs().max(1e-2);
    let nb = model.branch.tensors().len();
    for ti in 0..nb {
        let len = model.branch.tensors()[ti].len();
        let idx = (ti * 7) % len;
        let orig = model.branch.tensors()[ti].data()[idx];
        model.branch.tensors_mut()[ti].data_mut()[idx] = orig + h;
        let up = value(&model);
        model.branch.tensors_mut()[ti].data_mut()[idx] = orig - h;
        let dn = value(&model);
        model.branch.tensors_mut()[ti].data_mut()[idx] = orig;
        let fd = (up - dn) / (2.0 * h);
        let a = grads.branch[ti].data()[idx];
        assert!(close(a, fd), "{objective} psi tensor {ti}[{idx}]: {a} vs {fd}");
    }
    if objective == Objective::Miwlb {
        let nr = model.reverse.as_ref().unwrap().tensors().len();
        let mut nonzero = false;
        for ti in 0..nr {
            let len = model.reverse.as_ref().unwrap().tensors()[ti].len();
            for idx in [0, len - 1] {
                let rev = model.reverse.as_mut().unwrap();
                let orig = rev.tensors()[ti].data()[idx];
                rev.tensors_mut()[ti].data_mut()[idx] = orig + h;
                let up = value(&model);
                model.reverse.as_mut().unwrap().tensors_mut()[ti].data_mut()[idx] = orig - h;
                let dn = value(&model);
                model.reverse.as_mut().unwrap().tensors_mut()[ti].data_mut()[idx] = orig;
                let fd = (up - dn) / (2.0 * h);
                let a = grads.reverse[ti].data()[idx];
                nonzero |= a != 0.0;
                assert!(close(a, fd), "xi tensor {ti}[{idx}]: {a} vs {fd}");
            }
        }
        // With J = 0 the anchor's ratio term still involves the reverse model.
        assert!(nonzero);
    } else {
        assert!(grads.reverse.is_empty());
    }
}

#[test]
fn msilb_gradients_match_finite_differences() {
    check_gradients(Objective::Msilb, 4, 21);
}

#[test]
fn miwlb_gradients_match_finite_differences() {
    check_gradients(Objective::Miwlb, 4, 22);
    check_gradients(Objective::Miwlb, 0, 23);
}

#[test]
fn topology_gradient_vanishes_for_equal_weights() {
    let (target, mut model) = models(7);
    model.branch.zero_z_pathway();
    let est = estimate(&model, &target, cfg(Objective::Msilb, 4, 2), 3, 3, true).unwrap();
    let g = est.grads.unwrap();
    assert_eq!(g.sbn.len(), model.sbn.logits().len());
    assert!(g.sbn.iter().all(|x| x.is_finite()));
}

#[test]
fn fixed_tree_bound_uses_the_conditional_target() {
    let (target, model) = models(4);
    let tree = TreeTopology::enumerate_all(4).unwrap().remove(2);
    let est = estimate_on_tree(&model, &target, cfg(Objective::Msilb, 3, 2), &tree, 1, 0, true).unwrap();
    let shift = log_unrooted_topology_count(4);
    for p in &est.particles {
        assert!(p.tree.same_topology(&tree));
        assert_eq!(p.log_q_tree, -shift);
        let prior = target.log_prior(&tree, &p.q).unwrap();
        let ll = target.log_likelihood(&tree, &p.q).unwrap();
        let expect = 0.7 * ll + prior + shift - p.log_q_branch;
        assert!((p.log_weight - expect).abs() < 1e-9);
    }
    let g = est.grads.unwrap();
    assert!(g.sbn.iter().all(|&x| x == 0.0));
    let single = BoundConfig { k: 1, ..cfg(Objective::Msilb, 1, 2) };
    assert!(estimate_on_tree(&model, &target, single, &tree, 1, 0, true).is_ok());
    let wrong = TreeTopology::enumerate_all(5).unwrap().remove(0);
    assert!(estimate_on_tree(&model, &target, single, &wrong, 1, 0, false).is_err());
}

// The doubly reparameterized reverse gradient must average to the pathwise
// one. Checked per component on paired differences over many steps.
#[test]
fn doubly_reparameterized_reverse_gradient_is_unbiased() {
    use rand::Rng;
    let (target, mut model) = models(12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for t in model.reverse.as_mut().unwrap().tensors_mut().into_iter().chain(model.branch.tensors_mut()) {
        for x in t.data_mut() {
            *x += 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    let n = 6000;
    let flat = |v: &[Tensor]| v.iter().flat_map(|t| t.data().to_vec()).collect::<Vec<f64>>();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for s in 0..n {
        let g = estimate(&model, &target, cfg(Objective::Miwlb, 3, 4), 9, s, true).unwrap().grads.unwrap();
        let (a, b) = (flat(&g.reverse), flat(&g.reverse_dr));
        sums.resize(a.len(), (0.0, 0.0));
        for ((s1, s2), d) in sums.iter_mut().zip(a.iter().zip(&b).map(|(x, y)| x - y)) {
            *s1 += d;
            *s2 += d * d;
        }
    }
    let nf = n as f64;
    let worst = sums
        .iter()
        .map(|(s1, s2)| {
            let m = s1 / nf;
            m.abs() / ((s2 / nf - m * m) / nf).sqrt()
        })
        .fold(0.0, f64::max);
    assert!(sums.len() > 100 && worst < 4.5, "largest |z| {worst} over {} components", sums.len());
}
