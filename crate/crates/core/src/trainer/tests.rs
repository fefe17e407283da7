use super::*;
use crate::testutil::{instance, tiny_config};

fn setup(objective: Objective, iterations: u64) -> Trainer {
    let (aln, _, support) = instance(4, 30, 11);
    let config = TrainConfig {
        objective,
        k: 3,
        j: 4,
        iterations,
        anneal_horizon: 50,
        seed: 21,
        model: tiny_config(if objective == Objective::Mlb { 0 } else { 3 }),
        ..TrainConfig::default()
    };
    Trainer::new(config, &aln, support).unwrap()
}

#[test]
fn zero_iterations_change_nothing() {
    let mut t = setup(Objective::Miwlb, 0);
    let before = t.model().clone();
    assert!(t.train().unwrap().is_empty());
    assert_eq!(t.model(), &before);
    assert_eq!(t.iteration(), 0);
}

#[test]
fn metric_stream_is_deterministic_and_lambda_follows_schedule() {
    for objective in [Objective::Mlb, Objective::Msilb, Objective::Miwlb] {
        let a = setup(objective, 12).train().unwrap();
        let b = setup(objective, 12).train().unwrap();
        assert_eq!(a.len(), 12);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.iteration, x.lambda.to_bits(), x.bound.to_bits()), (y.iteration, y.lambda.to_bits(), y.bound.to_bits()));
            assert_eq!(x.lambda, annealing_schedule_with(x.iteration, 50));
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut t = setup(Objective::Miwlb, 5);
    t.train().unwrap();
    let bytes = t.to_bytes();
    let back = Trainer::from_bytes(&bytes).unwrap();
    assert_eq!(back.model(), t.model());
    assert_eq!(back.optimizer(), t.optimizer());
    assert_eq!(back.iteration(), 5);
    assert_eq!(back.config(), t.config());
    assert_eq!(back.to_bytes(), bytes);
    let arrays = |m: &Variational| model_arrays(m).into_iter().flat_map(|(_, a)| a).map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(arrays(back.model()), arrays(t.model()));
}

#[test]
fn resumed_run_reproduces_the_tail() {
    for objective in [Objective::Msilb, Objective::Miwlb] {
        let full = setup(objective, 20).train().unwrap();
        let mut first = setup(objective, 10);
        first.train().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("half.ckpt");
        first.save(&path).unwrap();
        let mut resumed = Trainer::load(&path).unwrap();
        resumed.set_iterations(20);
        let tail = resumed.train().unwrap();
        assert_eq!(tail.len(), 10);
        for (x, y) in tail.iter().zip(&full[10..]) {
            assert_eq!((x.iteration, x.bound.to_bits()), (y.iteration, y.bound.to_bits()));
        }
    }
}

#[test]
fn periodic_checkpoints_are_written() {
    let mut t = setup(Objective::Msilb, 6);
    let mut cfg = *t.config();
    cfg.checkpoint_every = 4;
    t.config = cfg;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ckpt");
    let mut seen = Vec::new();
    t.run(Some(&path), |r| {
        seen.push((r.iteration, path.exists()));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen[3], (3, false));
    assert_eq!(seen[4], (4, true));
    assert_eq!(Trainer::load(&path).unwrap().iteration(), 6);
}

#[test]
fn bad_checkpoints_are_rejected() {
    let t = setup(Objective::Msilb, 0);
    let bytes = t.to_bytes();
    let mut flipped = bytes.clone();
    let n = flipped.len();
    flipped[n - 3] ^= 0x10;
    assert!(matches!(Trainer::from_bytes(&flipped), Err(Error::Checkpoint(_))));
    let mut versioned = bytes.clone();
    versioned[8] = 99;
    let err = Trainer::from_bytes(&versioned).unwrap_err();
    assert!(err.to_string().contains("version"), "{err}");
    assert!(Trainer::from_bytes(&bytes[..bytes.len() / 2]).is_err());
    assert!(Trainer::from_bytes(b"hello").is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    t.save(&path).unwrap();
    let (five, _, _) = instance(5, 10, 2);
    assert!(matches!(Trainer::load_for(&path, &five), Err(Error::TaxonMismatch(_))));
    assert!(Trainer::load_for(&path, t.alignment()).is_ok());
    assert!(Trainer::load(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn runaway_parameters_abort_with_a_diagnostic() {
    let mut t = setup(Objective::Msilb, 5);
    t.model.branch.mu_head_mut().output_layer_mut().bias.data_mut()[0] = 1000.0;
    match t.train() {
        Err(Error::NonFinite { iteration, detail }) => {
            assert_eq!(iteration, 0);
            assert!(detail.contains("particle"), "{detail}");
        }
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn training_raises_the_bound() {
    let mut t = setup(Objective::Msilb, 400);
    let mut cfg = *t.config();
    cfg.lr_branch = 0.01;
    cfg.lr_topology = 0.01;
    cfg.anneal_horizon = 1;
    t.config = cfg;
    let rec = t.train().unwrap();
    let mean = |r: &[IterationRecord]| r.iter().map(|x| x.bound).sum::<f64>() / r.len() as f64;
    assert!(mean(&rec[350..]) > mean(&rec[..50]) + 1.0, "{} vs {}", mean(&rec[350..]), mean(&rec[..50]));
}

#[test]
fn fixed_tree_training_leaves_topology_logits() {
    let t = setup(Objective::Miwlb, 5);
    let logits = t.model().sbn.logits().to_vec();
    let tree = TreeTopology::enumerate_all(4).unwrap().remove(0);
    let mut t = t.on_tree(tree.clone()).unwrap();
    t.train().unwrap();
    assert_eq!(t.model().sbn.logits(), &logits[..]);
    let back = Trainer::from_bytes(&t.to_bytes()).unwrap();
    assert!(back.fixed_tree().unwrap().same_topology(&tree));
    let wrong = TreeTopology::enumerate_all(5).unwrap().remove(0);
    assert!(setup(Objective::Msilb, 1).on_tree(wrong).is_err());
}
