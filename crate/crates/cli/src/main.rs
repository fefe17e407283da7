use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sivbpi::evalkit::{
    self, branch_marginal_divergence, ess, estimate_elbo_lbk, estimate_ml_reps, exact_log_evidence, marginal_mode,
    per_tree_gaps, read_reference_marginals, sample_on_tree, sample_variational, Divergence, EvalReport,
    GapSettings,
};
use sivbpi::phylo::simulate::{default_names, random_branch_lengths, simulate_alignment};
use sivbpi::phylo::exact_log_marginal_likelihood;
use sivbpi::seqio::{
    format_value, parse_newick, parse_newick_lines, read_alignment, write_newick, MetricsWriter, ReferenceSampleSet,
    TreeSampleSet,
};
use sivbpi::{Objective, SbnModel, SbnSupport, TaxonSet, TrainConfig, Trainer, TreeTopology};

#[derive(Parser)]
#[command(name = "sivbpi", version, about = "Variational Bayesian phylogenetics with semi-implicit branch lengths")]
struct Cli {
    /// Worker threads for particle-level parallelism.
    #[arg(long, global = true, env = "SIVBPI_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the SBN support from tree sample files.
    Support(SupportArgs),
    /// Train a variational approximation.
    Train(TrainArgs),
    /// Estimate ELBO, LB-10, marginal likelihood and ESS of a checkpoint.
    Eval(EvalArgs),
    /// Per-tree approximation and amortization gaps.
    Gaps(GapsArgs),
    /// Branch length TV/KL against reference samples.
    Diag(DiagArgs),
    /// Simulate an alignment under JC69.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SupportArgs {
    /// Newick files, one tree per line.
    #[arg(long, num_args = 1.., required = true)]
    trees: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    alignment: PathBuf,
    /// Support file written by `support`.
    #[arg(long)]
    support: PathBuf,
    /// key = value file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_objective)]
    objective: Option<Objective>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "J")]
    j: Option<usize>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    anneal_horizon: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from this checkpoint up to `--iters`.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Checkpoint path; metrics go beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 1000)]
    ml_samples: usize,
    #[arg(long = "J-eval", default_value_t = 1000)]
    j_eval: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Replicates of the marginal likelihood estimate.
    #[arg(long, default_value_t = 10)]
    ml_reps: usize,
    /// Held-out draws for the ESS of the inner weights (0 skips it).
    #[arg(long, default_value_t = 0)]
    ess_samples: usize,
    /// Also report the closed-form log marginal likelihood (tiny instances).
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Report path; `.json` gives JSON, anything else CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GapsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Newick trees, one per line; tree ids are 0-based line numbers.
    #[arg(long)]
    trees: PathBuf,
    /// CSV with columns tree_id,logml.
    #[arg(long, conflicts_with = "exact")]
    reference: Option<PathBuf>,
    /// Compute the reference in closed form (tiny instances only).
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 2000)]
    iters: u64,
    #[arg(long = "J", default_value_t = 50)]
    j: usize,
    #[arg(long = "J-eval", default_value_t = 1000)]
    j_eval: usize,
    #[arg(long, default_value_t = 1000)]
    n_eval: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Reference trees with branch lengths, one Newick per line.
    #[arg(long)]
    reference: PathBuf,
    /// Most frequent reference topologies to compare on.
    #[arg(long, default_value_t = 1)]
    top: usize,
    #[arg(long, default_value_t = 10000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    taxa: usize,
    #[arg(long)]
    sites: usize,
    /// `random`, or a Newick string (branch lengths drawn if absent).
    #[arg(long, default_value = "random")]
    tree: String,
    #[arg(long, default_value_t = 0.1)]
    mean_length: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// FASTA path; the true tree goes beside it as `.tree.nwk`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse().map_err(|e: sivbpi::Error| e.to_string())
}

fn beside(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn support(a: SupportArgs) -> Result<()> {
    let mut set: Option<TreeSampleSet> = None;
    for path in &a.trees {
        let next = TreeSampleSet::read(path, set.as_ref().map(|s| s.taxa()))
            .with_context(|| format!("reading {}", path.display()))?;
        match set.as_mut() {
            Some(s) => s.extend(&next)?,
            None => set = Some(next),
        }
    }
    let set = set.expect("clap requires at least one file");
    let support = SbnSupport::from_samples(&set)?;
    println!("trees read: {}", set.len());
    println!("root subsplits: {}", support.root_subsplits().len());
    println!("child-parent subsplit pairs: {}", support.n_child_pairs());
    SbnModel::new(support).save(&a.out)?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(path) => Trainer::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => {
            let mut cfg = match &a.config {
                Some(p) => TrainConfig::read(p)?,
                None => TrainConfig::default(),
            };
            if let Some(o) = a.objective {
                cfg.objective = o;
            }
            if cfg.objective == Objective::Mlb {
                cfg.model.hidden_dim = 0;
            }
            cfg.k = a.k.unwrap_or(cfg.k);
            cfg.j = a.j.unwrap_or(cfg.j);
            cfg.iterations = a.iters.unwrap_or(cfg.iterations);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.anneal_horizon = a.anneal_horizon.unwrap_or(cfg.anneal_horizon);
            cfg.checkpoint_every = a.checkpoint_every.unwrap_or(cfg.checkpoint_every);
            let aln = read_alignment(&a.alignment, None)?;
            let support = SbnModel::load(&a.support)?.support().clone();
            Trainer::new(cfg, &aln, support)?
        }
    };
    if a.resume.is_some() {
        if let Some(n) = a.iters {
            trainer.set_iterations(n);
        }
    }
    let cols = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut metrics = MetricsWriter::create(&beside(&a.out, ".metrics.csv"), cols(&["iteration", "lambda", "bound"]))?;
    let mut timing = MetricsWriter::create(&beside(&a.out, ".timing.csv"), cols(&["iteration", "wall_time"]))?;
    info!(
        "training {} from iteration {} to {}",
        trainer.config().objective,
        trainer.iteration(),
        trainer.config().iterations
    );
    trainer.run(Some(&a.out), |r| {
        metrics.write_row(&[r.iteration as f64, r.lambda, r.bound])?;
        timing.write_row(&[r.iteration as f64, r.wall_time])?;
        if r.iteration % 1000 == 0 {
            info!("iter {} lambda {} bound {:.4}", r.iteration, r.lambda, r.bound);
        }
        Ok(())
    })?;
    metrics.flush()?;
    timing.flush()?;
    println!("checkpoint: {}", a.out.display());
    Ok(())
}

fn load(path: &Path) -> Result<Trainer> {
    Trainer::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let t = load(&a.ckpt)?;
    let (m, target) = (t.model(), t.target());
    let elbo = estimate_elbo_lbk(m, target, 1, a.j_eval, a.reps, a.seed)?;
    let lb10 = estimate_elbo_lbk(m, target, 10, a.j_eval, a.reps, a.seed)?;
    let ml = estimate_ml_reps(m, target, a.ml_samples, a.j_eval, a.ml_reps, a.seed)?;
    let ess = if a.ess_samples > 0 && m.branch.hidden_dim() > 0 {
        let held_out = sample_variational(m, a.ess_samples, a.seed ^ 0xE55)?;
        Some(ess(&m.branch, marginal_mode(m), &held_out, a.j_eval, a.seed)?)
    } else {
        None
    };
    let report = EvalReport {
        objective: evalkit::eval_objective(m).to_string(),
        elbo,
        lb10,
        ml,
        ess,
        exact_ml: if a.exact { Some(exact_log_evidence(target)?) } else { None },
    };
    let mut csv = String::from("metric,mean,sd,n\n");
    let rows = [("elbo", Some(elbo)), ("lb10", Some(lb10)), ("ml", Some(ml)), ("ess", ess)];
    for (name, s) in rows.iter().filter_map(|(n, s)| s.map(|s| (n, s))) {
        let _ = writeln!(csv, "{name},{},{},{}", format_value(s.mean), format_value(s.sd), s.n);
    }
    if let Some(x) = report.exact_ml {
        let _ = writeln!(csv, "exact_ml,{},0,1", format_value(x));
    }
    print!("{csv}");
    if let Some(out) = &a.out {
        let text = if out.extension().is_some_and(|e| e == "json") {
            serde_json::to_string_pretty(&report)? + "\n"
        } else {
            csv
        };
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn gaps(a: GapsArgs) -> Result<()> {
    let t = load(&a.ckpt)?;
    let taxa = t.model().sbn.support().taxa().clone();
    let text = std::fs::read_to_string(&a.trees).with_context(|| format!("reading {}", a.trees.display()))?;
    let trees: Vec<TreeTopology> = parse_newick_lines(&text, &taxa)?.into_iter().map(|p| p.topology).collect();
    let refs: BTreeMap<String, f64> = match &a.reference {
        Some(p) => read_reference_marginals(p)?,
        None => BTreeMap::new(),
    };
    if a.reference.is_none() && !a.exact {
        bail!("gaps needs --reference <csv> or --exact");
    }
    let mut train = *t.config();
    train.iterations = a.iters;
    train.j = a.j;
    train.checkpoint_every = 0;
    let settings = GapSettings {
        train,
        n_eval: a.n_eval,
        j_eval: a.j_eval,
        seed: a.seed,
    };
    let mut out = String::from("tree_id,log_ml,elbo,best_elbo,approximation_gap,amortization_gap,inference_gap\n");
    for (i, tree) in trees.iter().enumerate() {
        let reference = if a.exact {
            let target = t.target();
            Some(exact_log_marginal_likelihood(target.patterns(), tree, target.prior_rate())?)
        } else {
            refs.get(&i.to_string()).copied()
        };
        let g = per_tree_gaps(t.model(), t.alignment(), tree, reference, &settings)
            .with_context(|| format!("tree {i}"))?;
        let vals = [g.log_ml, g.elbo, g.best_elbo, g.approximation_gap, g.amortization_gap, g.inference_gap];
        let vals: Vec<String> = vals.iter().map(|&x| format_value(x)).collect();
        let _ = writeln!(out, "{i},{}", vals.join(","));
    }
    print!("{out}");
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn diag(a: DiagArgs) -> Result<()> {
    let t = load(&a.ckpt)?;
    let taxa = t.model().sbn.support().taxa().clone();
    let refs = ReferenceSampleSet::read(&a.reference, &taxa)?;
    // Most frequent topologies first.
    let mut tops: Vec<(TreeTopology, usize)> = Vec::new();
    for (tree, _) in refs.records() {
        match tops.iter_mut().find(|(t, _)| t.same_topology(tree)) {
            Some((_, c)) => *c += 1,
            None => tops.push((tree.clone(), 1)),
        }
    }
    tops.sort_by(|x, y| y.1.cmp(&x.1));
    let mut out = String::from("tree,n_reference,tv,kl\n");
    for (tree, count) in tops.iter().take(a.top) {
        let reference = refs.lengths_on(tree);
        let samples = sample_on_tree(t.model(), tree, a.samples, a.seed)?;
        let tv = branch_marginal_divergence(tree, &samples, tree, &reference, Divergence::Tv)?;
        let kl = branch_marginal_divergence(tree, &samples, tree, &reference, Divergence::Kl)?;
        let _ = writeln!(
            out,
            "\"{}\",{count},{},{}",
            write_newick(tree, None, &taxa),
            format_value(tv),
            format_value(kl)
        );
    }
    print!("{out}");
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let (names, tree, q) = if a.tree == "random" {
        let names = default_names(a.taxa);
        let tree = TreeTopology::random(a.taxa, &mut rng)?;
        let q = random_branch_lengths(&tree, a.mean_length, &mut rng)?;
        (names, tree, q)
    } else {
        let names = sivbpi::seqio::newick::leaf_labels(&a.tree)?;
        if names.len() != a.taxa {
            bail!("--tree has {} leaves but --taxa is {}", names.len(), a.taxa);
        }
        let taxa = TaxonSet::new(names.clone())?;
        let parsed = parse_newick(&a.tree, &taxa)?;
        let q = match parsed.lengths {
            Some(q) => q,
            None => random_branch_lengths(&parsed.topology, a.mean_length, &mut rng)?,
        };
        (names, parsed.topology, q)
    };
    let aln = simulate_alignment(&tree, &q, &names, a.sites, &mut rng)?;
    std::fs::write(&a.out, aln.to_fasta()).with_context(|| format!("writing {}", a.out.display()))?;
    let taxa = TaxonSet::new(names)?;
    let tree_path = a.out.with_extension("tree.nwk");
    std::fs::write(&tree_path, write_newick(&tree, Some(&q), &taxa) + "\n")
        .with_context(|| format!("writing {}", tree_path.display()))?;
    println!("alignment: {}", a.out.display());
    println!("true tree: {}", tree_path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIVBPI_LOG", "info")).init();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    match cli.command {
        Command::Support(a) => support(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Gaps(a) => gaps(a),
        Command::Diag(a) => diag(a),
        Command::Simulate(a) => simulate(a),
    }
}
