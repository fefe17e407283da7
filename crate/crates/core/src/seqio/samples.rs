use std::path::Path;

use crate::error::{Error, Result};
use crate::phylo::{BranchLengths, TreeTopology};

use super::newick::{leaf_labels, parse_newick, TaxonSet};

/// Topologies over one taxon set, with optional nonnegative weights.
#[derive(Debug, Clone)]
pub struct TreeSampleSet {
    taxa: TaxonSet,
    trees: Vec<TreeTopology>,
    weights: Option<Vec<f64>>,
}

impl TreeSampleSet {
    pub fn new(taxa: TaxonSet, trees: Vec<TreeTopology>, weights: Option<Vec<f64>>) -> Result<Self> {
        for t in &trees {
            if t.n_leaves() != taxa.len() {
                return Err(Error::TaxonMismatch(format!(
                    "tree over {} taxa in a set of {}",
                    t.n_leaves(),
                    taxa.len()
                )));
            }
        }
        if let Some(w) = &weights {
            if w.len() != trees.len() {
                return Err(Error::Dimension(format!("{} weights for {} trees", w.len(), trees.len())));
            }
            if let Some(bad) = w.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument(format!("tree weight {bad} is not a finite nonnegative number")));
            }
        }
        Ok(TreeSampleSet { taxa, trees, weights })
    }

    /// Parses one Newick tree per line. A line may start with a weight
    /// followed by a tab. When `taxa` is `None`, the taxon order is the leaf
    /// order of the first tree.
    pub fn parse(text: &str, taxa: Option<&TaxonSet>) -> Result<Self> {
        let lines: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let taxa = match taxa {
            Some(t) => t.clone(),
            None => {
                let first = lines.first().ok_or_else(|| Error::Empty("no trees".into()))?;
                TaxonSet::new(leaf_labels(split_weight(first)?.1)?)?
            }
        };
        let mut trees = Vec::with_capacity(lines.len());
        let mut weights = Vec::new();
        for line in &lines {
            let (w, nwk) = split_weight(line)?;
            trees.push(parse_newick(nwk, &taxa)?.topology);
            if let Some(w) = w {
                weights.push(w);
            }
        }
        let weights = match weights.len() {
            0 => None,
            n if n == trees.len() => Some(weights),
            _ => return Err(Error::Parse("either every tree line carries a weight or none does".into())),
        };
        TreeSampleSet::new(taxa, trees, weights)
    }

    pub fn read(path: &Path, taxa: Option<&TaxonSet>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, taxa)
    }

    pub fn taxa(&self) -> &TaxonSet {
        &self.taxa
    }

    pub fn trees(&self) -> &[TreeTopology] {
        &self.trees
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// Appends another set over the same taxon names (any order).
    pub fn extend(&mut self, other: &TreeSampleSet) -> Result<()> {
        let mut sorted_a = self.taxa.names().to_vec();
        let mut sorted_b = other.taxa.names().to_vec();
        sorted_a.sort();
        sorted_b.sort();
        if sorted_a != sorted_b {
            return Err(Error::TaxonMismatch("tree files cover different taxa".into()));
        }
        let map: Vec<usize> = other
            .taxa
            .names()
            .iter()
            .map(|n| self.taxa.id(n).expect("same names"))
            .collect();
        let n = self.taxa.len();
        for t in &other.trees {
            let edges = t
                .edges()
                .iter()
                .map(|&(a, b)| {
                    let f = |v: usize| if v < n { map[v] } else { v };
                    (f(a), f(b))
                })
                .collect();
            self.trees.push(TreeTopology::from_edges(n, edges)?.canonical());
        }
        match (&mut self.weights, &other.weights) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            (None, None) => {}
            (a, b) => {
                // Mixing weighted and unweighted files: unweighted trees count once.
                let mut merged = a.take().unwrap_or_else(|| vec![1.0; self.trees.len() - other.len()]);
                merged.extend(b.clone().unwrap_or_else(|| vec![1.0; other.len()]));
                *a = Some(merged);
            }
        }
        Ok(())
    }
}

fn split_weight(line: &str) -> Result<(Option<f64>, &str)> {
    match line.split_once('\t') {
        Some((w, rest)) if !w.trim_start().starts_with('(') => {
            let w = w
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad tree weight `{w}`")))?;
            Ok((Some(w), rest.trim()))
        }
        _ => Ok((None, line)),
    }
}

/// Trees with branch lengths from an external sampler, one Newick per line.
#[derive(Debug, Clone)]
pub struct ReferenceSampleSet {
    taxa: TaxonSet,
    records: Vec<(TreeTopology, BranchLengths)>,
}

impl ReferenceSampleSet {
    pub fn parse(text: &str, taxa: &TaxonSet) -> Result<Self> {
        let mut records = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let p = parse_newick(line, taxa)?;
            let q = p
                .lengths
                .ok_or_else(|| Error::Parse("reference tree lacks branch lengths".into()))?;
            if let Some(&bad) = q.values().iter().find(|&&x| !(x > 0.0)) {
                return Err(Error::InvalidBranchLength(bad));
            }
            records.push((p.topology, q));
        }
        if records.is_empty() {
            return Err(Error::Empty("no reference samples".into()));
        }
        Ok(ReferenceSampleSet {
            taxa: taxa.clone(),
            records,
        })
    }

    pub fn read(path: &Path, taxa: &TaxonSet) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, taxa)
    }

    pub fn taxa(&self) -> &TaxonSet {
        &self.taxa
    }

    pub fn records(&self) -> &[(TreeTopology, BranchLengths)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Branch lengths of the samples whose topology equals `tree`, permuted
    /// into `tree`'s edge order.
    pub fn lengths_on(&self, tree: &TreeTopology) -> Vec<BranchLengths> {
        let target = tree.canonical();
        let canonical_input = tree == &target;
        self.records
            .iter()
            .filter(|(t, _)| t.same_topology(tree))
            .map(|(t, q)| {
                if canonical_input && t == tree {
                    q.clone()
                } else {
                    align_lengths(t, q, tree)
                }
            })
            .collect()
    }
}

/// Reindexes `q` (on `from`) onto the edges of the same topology `to`,
/// matching edges by the split they induce.
pub fn align_lengths(from: &TreeTopology, q: &BranchLengths, to: &TreeTopology) -> BranchLengths {
    let from_splits = from.splits();
    let to_splits = to.splits();
    let vals = to_splits
        .iter()
        .map(|s| {
            let i = from_splits.iter().position(|x| x == s).expect("same topology");
            q.values()[i]
        })
        .collect();
    BranchLengths::new(vals)
}
