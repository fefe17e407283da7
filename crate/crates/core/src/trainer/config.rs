use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::bounds::{Objective, DEFAULT_ANNEAL_HORIZON, DEFAULT_J, DEFAULT_K};
use crate::error::{Error, Result};
use crate::sibranch::ModelConfig;

/// Settings of one training run.
///
/// The text form is one `key = value` per line; `#` starts a comment and
/// blank lines are ignored. Keys are the field names below, with the model
/// sizes flattened (`feature_dim`, `hidden_dim`, `mlp_width`,
/// `mlp_hidden_layers`, `rounds`). Missing keys keep their defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub k: usize,
    pub j: usize,
    pub iterations: u64,
    pub lr_topology: f64,
    pub lr_branch: f64,
    pub lr_reverse: f64,
    pub anneal_horizon: u64,
    pub seed: u64,
    /// Checkpoint every this many iterations; 0 means only at the end.
    pub checkpoint_every: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Msilb,
            k: DEFAULT_K,
            j: DEFAULT_J,
            iterations: 20_000,
            lr_topology: 0.001,
            lr_branch: 0.001,
            lr_reverse: 0.001,
            anneal_horizon: DEFAULT_ANNEAL_HORIZON,
            seed: 0,
            checkpoint_every: 0,
            model: ModelConfig::default(),
        }
    }
}

const KEYS: [&str; 15] = [
    "objective",
    "K",
    "J",
    "iterations",
    "lr_topology",
    "lr_branch",
    "lr_reverse",
    "anneal_horizon",
    "seed",
    "checkpoint_every",
    "feature_dim",
    "hidden_dim",
    "mlp_width",
    "mlp_hidden_layers",
    "rounds",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("bad value `{v}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k == 0 {
            return bad("K must be positive".into());
        }
        for (name, lr) in [
            ("lr_topology", self.lr_topology),
            ("lr_branch", self.lr_branch),
            ("lr_reverse", self.lr_reverse),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.anneal_horizon == 0 {
            return bad("anneal_horizon must be positive".into());
        }
        let m = &self.model;
        if m.feature_dim == 0 || m.mlp_width == 0 {
            return bad("feature_dim and mlp_width must be positive".into());
        }
        if self.objective != Objective::Mlb && m.hidden_dim == 0 {
            return bad(format!("{} needs hidden_dim > 0", self.objective));
        }
        Ok(())
    }

    /// `key -> value` strings, one per key.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let m = &self.model;
        let vals = [
            self.objective.to_string(),
            self.k.to_string(),
            self.j.to_string(),
            self.iterations.to_string(),
            format!("{:?}", self.lr_topology),
            format!("{:?}", self.lr_branch),
            format!("{:?}", self.lr_reverse),
            self.anneal_horizon.to_string(),
            self.seed.to_string(),
            self.checkpoint_every.to_string(),
            m.feature_dim.to_string(),
            m.hidden_dim.to_string(),
            m.mlp_width.to_string(),
            m.mlp_hidden_layers.to_string(),
            m.rounds.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(vals).collect()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key {
            "objective" => self.objective = v.parse()?,
            "K" | "k" => self.k = num(key, v)?,
            "J" | "j" => self.j = num(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "lr_topology" => self.lr_topology = num(key, v)?,
            "lr_branch" => self.lr_branch = num(key, v)?,
            "lr_reverse" => self.lr_reverse = num(key, v)?,
            "anneal_horizon" => self.anneal_horizon = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            "feature_dim" => self.model.feature_dim = num(key, v)?,
            "hidden_dim" => self.model.hidden_dim = num(key, v)?,
            "mlp_width" => self.model.mlp_width = num(key, v)?,
            "mlp_hidden_layers" => self.model.mlp_hidden_layers = num(key, v)?,
            "rounds" => self.model.rounds = num(key, v)?,
            other => return Err(Error::Parse(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_map<'a>(entries: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (k, v) in entries {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", n + 1)))?;
            entries.push((k.trim(), v.trim()));
        }
        Self::from_map(entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let map = self.to_map();
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", map[k]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_defaults() {
        let mut c = TrainConfig::default();
        assert_eq!(c.lr_topology, 0.001);
        assert_eq!(c.lr_branch, 0.001);
        assert_eq!(c.lr_reverse, 0.001);
        c.objective = Objective::Miwlb;
        c.lr_branch = 3.3e-4;
        c.model.rounds = 1;
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        let p = TrainConfig::parse("# comment\n\nK = 4  # inline\nobjective=baseline\nhidden_dim = 0\n").unwrap();
        assert_eq!((p.k, p.objective, p.j), (4, Objective::Mlb, DEFAULT_J));
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(TrainConfig::parse("K = 0").is_err());
        assert!(TrainConfig::parse("lr_branch = -1").is_err());
        assert!(TrainConfig::parse("colour = red").is_err());
        assert!(TrainConfig::parse("K").is_err());
        assert!(TrainConfig::parse("J = many").is_err());
        assert!(TrainConfig::parse("objective = msilb\nhidden_dim = 0").is_err());
    }
}
