//! Stochastic gradient ascent on the bounds, with annealing and checkpoints.

mod adam;
mod checkpoint;
mod config;

use std::path::Path;
use std::time::Instant;

use crate::bounds::{annealing_schedule_with, estimate, estimate_on_tree, BoundConfig, Objective, Variational};
use crate::error::{Error, Result};
use crate::phylo::{AnnealedTarget, TreeTopology};
use crate::sbn::SbnSupport;
use crate::seqio::Alignment;
use crate::tensor::Tensor;

pub use adam::{adam_step, adam_step_tensors, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::CHECKPOINT_VERSION;
pub use config::TrainConfig;

/// One line of the metric stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub lambda: f64,
    pub bound: f64,
    /// Seconds since the trainer was created or loaded.
    pub wall_time: f64,
}

/// Adam state per parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub topology: AdamState,
    pub branch: AdamState,
    pub reverse: AdamState,
}

impl OptimizerState {
    pub fn for_model(model: &Variational) -> Self {
        OptimizerState {
            topology: AdamState::new(model.sbn.logits().len()),
            branch: AdamState::new(model.branch.n_params()),
            reverse: AdamState::new(model.reverse.as_ref().map_or(0, |r| r.n_params())),
        }
    }
}

/// Everything a run needs to continue: config, data, parameters, optimizer
/// moments and the iteration counter. Random draws are addressed by
/// `(seed, iteration, particle)`, so there is no generator state to carry.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    alignment: Alignment,
    target: AnnealedTarget,
    model: Variational,
    optimizer: OptimizerState,
    iteration: u64,
    fixed_tree: Option<TreeTopology>,
    started: Instant,
}

impl Trainer {
    /// Fresh parameters. The alignment rows are put in the support's taxon
    /// order.
    pub fn new(config: TrainConfig, alignment: &Alignment, support: SbnSupport) -> Result<Self> {
        config.validate()?;
        let model = Variational::init(support, config.objective, config.model, config.seed);
        Self::with_model(config, alignment, model)
    }

    pub fn with_model(config: TrainConfig, alignment: &Alignment, model: Variational) -> Result<Self> {
        config.validate()?;
        let alignment = alignment.reordered(model.sbn.support().taxa().names())?;
        let target = AnnealedTarget::new(&alignment)?;
        if config.objective == Objective::Miwlb && model.reverse.is_none() {
            return Err(Error::InvalidArgument("MIWLB training needs a reverse model".into()));
        }
        let optimizer = OptimizerState::for_model(&model);
        Ok(Trainer {
            config,
            alignment,
            target,
            model,
            optimizer,
            iteration: 0,
            fixed_tree: None,
            started: Instant::now(),
        })
    }

    /// Restricts training to one topology; the topology model is left alone.
    pub fn on_tree(mut self, tree: TreeTopology) -> Result<Self> {
        if tree.n_leaves() != self.model.n_taxa() {
            return Err(Error::TaxonMismatch(format!(
                "tree has {} leaves, model {}",
                tree.n_leaves(),
                self.model.n_taxa()
            )));
        }
        self.fixed_tree = Some(tree);
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn alignment(&self) -> &Alignment {
        &self.alignment
    }

    pub fn target(&self) -> &AnnealedTarget {
        &self.target
    }

    pub fn model(&self) -> &Variational {
        &self.model
    }

    pub fn into_model(self) -> Variational {
        self.model
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn fixed_tree(&self) -> Option<&TreeTopology> {
        self.fixed_tree.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    pub fn lambda(&self) -> f64 {
        annealing_schedule_with(self.iteration, self.config.anneal_horizon)
    }

    /// One iteration: bound and gradients at the current parameters, then an
    /// Adam step per group.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let i = self.iteration;
        let lambda = self.lambda();
        let cfg = BoundConfig {
            objective: self.config.objective,
            k: self.config.k,
            j: self.config.j,
            lambda,
        };
        let est = match &self.fixed_tree {
            Some(t) => estimate_on_tree(&self.model, &self.target, cfg, t, self.config.seed, i, true)?,
            None => estimate(&self.model, &self.target, cfg, self.config.seed, i, true)?,
        };
        let grads = est.grads.expect("requested");
        let c = &self.config;
        if self.fixed_tree.is_none() {
            adam_step(self.model.sbn.logits_mut(), &grads.sbn, &mut self.optimizer.topology, c.lr_topology)?;
        }
        adam_step_tensors(self.model.branch.tensors_mut(), &grads.branch, &mut self.optimizer.branch, c.lr_branch)?;
        if let Some(rev) = self.model.reverse.as_mut() {
            if c.objective == Objective::Miwlb {
                adam_step_tensors(rev.tensors_mut(), &grads.reverse_dr, &mut self.optimizer.reverse, c.lr_reverse)?;
            }
        }
        if let Some(what) = self.first_non_finite() {
            return Err(Error::NonFinite {
                iteration: i as usize,
                detail: format!("{what} became non-finite after the update (bound {})", est.value),
            });
        }
        self.iteration += 1;
        Ok(IterationRecord {
            iteration: i,
            lambda,
            bound: est.value,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }

    fn first_non_finite(&self) -> Option<&'static str> {
        if !self.model.sbn.logits().iter().all(|x| x.is_finite()) {
            return Some("a topology logit");
        }
        if !self.model.branch.tensors().iter().all(|t| t.all_finite()) {
            return Some("a branch model weight");
        }
        match &self.model.reverse {
            Some(r) if !r.tensors().iter().all(|t| t.all_finite()) => Some("a reverse model weight"),
            _ => None,
        }
    }

    /// Runs to `config.iterations`, reporting every record. With a path, a
    /// checkpoint is written every `checkpoint_every` iterations and at the
    /// end.
    pub fn run(&mut self, checkpoint: Option<&Path>, mut on_record: impl FnMut(&IterationRecord) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let rec = self.step()?;
            on_record(&rec)?;
            let every = self.config.checkpoint_every;
            if let Some(path) = checkpoint {
                if every > 0 && self.iteration % every == 0 && !self.is_done() {
                    self.save(path)?;
                }
            }
        }
        if let Some(path) = checkpoint {
            self.save(path)?;
        }
        Ok(())
    }

    /// Trains to completion and returns the metric stream.
    pub fn train(&mut self) -> Result<Vec<IterationRecord>> {
        let mut out = Vec::new();
        self.run(None, |r| {
            out.push(*r);
            Ok(())
        })?;
        Ok(out)
    }

    /// Changes the stopping point, e.g. to extend a finished run.
    pub fn set_iterations(&mut self, iterations: u64) {
        self.config.iterations = iterations;
    }

    pub(crate) fn parts(&self) -> (&Variational, &OptimizerState) {
        (&self.model, &self.optimizer)
    }

    pub(crate) fn from_parts(
        config: TrainConfig,
        alignment: Alignment,
        model: Variational,
        optimizer: OptimizerState,
        iteration: u64,
        fixed_tree: Option<TreeTopology>,
    ) -> Result<Self> {
        let mut t = Trainer::with_model(config, &alignment, model)?;
        t.optimizer = optimizer;
        t.iteration = iteration;
        t.fixed_tree = fixed_tree;
        Ok(t)
    }
}

/// All parameter arrays of a model, in checkpoint order.
pub(crate) fn model_arrays(model: &Variational) -> Vec<(String, Vec<f64>)> {
    let mut v = vec![("sbn.logits".to_string(), model.sbn.logits().to_vec())];
    let tensors = |name: &str, ts: Vec<&Tensor>| -> Vec<(String, Vec<f64>)> {
        ts.into_iter().enumerate().map(|(i, t)| (format!("{name}.{i}"), t.data().to_vec())).collect()
    };
    v.extend(tensors("branch", model.branch.tensors()));
    if let Some(r) = &model.reverse {
        v.extend(tensors("reverse", r.tensors()));
    }
    v
}

#[cfg(test)]
mod tests;
