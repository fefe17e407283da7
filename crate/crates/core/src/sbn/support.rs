use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::phylo::TreeTopology;
use crate::seqio::{TaxonSet, TreeSampleSet};

use super::clade::{Clade, ParentContext, Subsplit};

/// One factor of a rooted tree's SBN probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Term {
    Root(Subsplit),
    Child(ParentContext, Subsplit),
}

/// Directed-edge clades of an unrooted tree, reused across its rootings.
pub(crate) struct RootingView<'a> {
    tree: &'a TreeTopology,
    clades: HashMap<(usize, usize), Clade>,
}

impl<'a> RootingView<'a> {
    pub(crate) fn new(tree: &'a TreeTopology) -> Self {
        RootingView {
            tree,
            clades: tree.directed_clades(),
        }
    }

    /// Calls `f` on every factor of the tree rooted on edge `edge`. Clades of
    /// fewer than three taxa have a forced split and yield no factor.
    pub(crate) fn for_each_term(&self, edge: usize, mut f: impl FnMut(Term)) {
        let (a, b) = self.tree.edges()[edge];
        let ca = self.clades[&(b, a)];
        let cb = self.clades[&(a, b)];
        f(Term::Root(Subsplit::new(ca, cb)));
        // (from, to, sister of the clade below to)
        let mut stack = vec![(b, a, cb), (a, b, ca)];
        while let Some((u, v, sister)) = stack.pop() {
            if self.tree.is_leaf(v) {
                continue;
            }
            let clade = self.clades[&(u, v)];
            let mut kids = self.tree.neighbors(v).iter().copied().filter(|&w| w != u);
            let (w1, w2) = (kids.next().expect("degree 3"), kids.next().expect("degree 3"));
            let (c1, c2) = (self.clades[&(v, w1)], self.clades[&(v, w2)]);
            if clade.len() >= 3 {
                f(Term::Child(ParentContext { clade, sister }, Subsplit::new(c1, c2)));
            }
            stack.push((v, w1, c2));
            stack.push((v, w2, c1));
        }
    }
}

/// Root subsplits and parent-child subsplit pairs observed over every rooting
/// of a set of trees, with a flat parameter layout.
///
/// Parameter group 0 holds the root subsplits; group `g + 1` holds the child
/// subsplits of context `g`. Only contexts whose clade has at least three taxa
/// carry parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SbnSupport {
    taxa: TaxonSet,
    roots: Vec<Subsplit>,
    contexts: Vec<ParentContext>,
    children: Vec<Vec<Subsplit>>,
    offsets: Vec<usize>,
    root_index: HashMap<Subsplit, usize>,
    context_index: HashMap<ParentContext, usize>,
    child_index: HashMap<(usize, Subsplit), usize>,
}

impl SbnSupport {
    pub fn from_samples(samples: &TreeSampleSet) -> Result<Self> {
        Self::from_trees(samples.taxa().clone(), samples.trees())
    }

    pub fn from_trees(taxa: TaxonSet, trees: &[TreeTopology]) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Empty("no trees to build a support from".into()));
        }
        let mut roots = BTreeSet::new();
        let mut cond: BTreeMap<ParentContext, BTreeSet<Subsplit>> = BTreeMap::new();
        for t in trees {
            if t.n_leaves() != taxa.len() {
                return Err(Error::TaxonMismatch(format!(
                    "tree over {} taxa in a support over {}",
                    t.n_leaves(),
                    taxa.len()
                )));
            }
            let view = RootingView::new(t);
            for e in 0..t.n_edges() {
                view.for_each_term(e, |term| match term {
                    Term::Root(s) => {
                        roots.insert(s);
                    }
                    Term::Child(ctx, s) => {
                        cond.entry(ctx).or_default().insert(s);
                    }
                });
            }
        }
        Ok(Self::from_parts(
            taxa,
            roots.into_iter().collect(),
            cond.into_iter().map(|(c, s)| (c, s.into_iter().collect())).collect(),
        ))
    }

    pub(crate) fn from_parts(
        taxa: TaxonSet,
        roots: Vec<Subsplit>,
        groups: Vec<(ParentContext, Vec<Subsplit>)>,
    ) -> Self {
        let root_index = roots.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let mut offsets = vec![0, roots.len()];
        let mut contexts = Vec::with_capacity(groups.len());
        let mut children = Vec::with_capacity(groups.len());
        let mut context_index = HashMap::with_capacity(groups.len());
        let mut child_index = HashMap::new();
        for (g, (ctx, kids)) in groups.into_iter().enumerate() {
            let start = *offsets.last().expect("nonempty");
            for (j, &s) in kids.iter().enumerate() {
                child_index.insert((g, s), start + j);
            }
            offsets.push(start + kids.len());
            context_index.insert(ctx, g);
            contexts.push(ctx);
            children.push(kids);
        }
        SbnSupport {
            taxa,
            roots,
            contexts,
            children,
            offsets,
            root_index,
            context_index,
            child_index,
        }
    }

    pub fn taxa(&self) -> &TaxonSet {
        &self.taxa
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn root_subsplits(&self) -> &[Subsplit] {
        &self.roots
    }

    pub fn contexts(&self) -> &[ParentContext] {
        &self.contexts
    }

    pub fn children(&self, context: usize) -> &[Subsplit] {
        &self.children[context]
    }

    /// Number of parent-child pairs.
    pub fn n_child_pairs(&self) -> usize {
        self.children.iter().map(Vec::len).sum()
    }

    pub fn n_params(&self) -> usize {
        *self.offsets.last().expect("nonempty")
    }

    pub fn n_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Parameter index range of group `g` (0 is the root group).
    pub fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn root_param(&self, s: &Subsplit) -> Option<usize> {
        self.root_index.get(s).copied()
    }

    pub fn context_group(&self, ctx: &ParentContext) -> Option<usize> {
        self.context_index.get(ctx).map(|g| g + 1)
    }

    /// Group and parameter index of a factor, if it is in the support.
    pub(crate) fn locate(&self, term: Term) -> Option<(usize, usize)> {
        match term {
            Term::Root(s) => self.root_param(&s).map(|i| (0, i)),
            Term::Child(ctx, s) => {
                let g = *self.context_index.get(&ctx)?;
                self.child_index.get(&(g, s)).map(|&i| (g + 1, i))
            }
        }
    }

    /// Whether some rooting of `tree` has all its factors in the support.
    pub fn contains(&self, tree: &TreeTopology) -> bool {
        let view = RootingView::new(tree);
        (0..tree.n_edges()).any(|e| {
            let mut ok = true;
            view.for_each_term(e, |t| ok &= self.locate(t).is_some());
            ok
        })
    }

    /// Whether every element of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &SbnSupport) -> bool {
        self.roots.iter().all(|s| other.root_index.contains_key(s))
            && self.contexts.iter().zip(&self.children).all(|(ctx, kids)| {
                kids.iter().all(|&s| other.locate(Term::Child(*ctx, s)).is_some())
            })
    }

    /// Checks that root subsplits cover all taxa and that every child splits
    /// its context clade.
    pub fn validate(&self) -> Result<()> {
        let full = Clade::full(self.n_taxa());
        for s in &self.roots {
            if s.clade() != full {
                return Err(Error::InvalidArgument(format!("root subsplit {s:?} does not cover all taxa")));
            }
        }
        for (ctx, kids) in self.contexts.iter().zip(&self.children) {
            if !ctx.clade.is_disjoint(ctx.sister) {
                return Err(Error::InvalidArgument(format!("context {ctx:?} overlaps its sister")));
            }
            for s in kids {
                if s.clade() != ctx.clade {
                    return Err(Error::InvalidArgument(format!("child {s:?} does not split {:?}", ctx.clade)));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqio::TreeSampleSet;

    fn quartet() -> TreeSampleSet {
        TreeSampleSet::parse("((A,B),(C,D));", None).unwrap()
    }

    #[test]
    fn quartet_rootings() {
        let s = SbnSupport::from_samples(&quartet()).unwrap();
        assert_eq!(s.root_subsplits().len(), 5);
        // One 3-taxon clade below each pendant rooting.
        assert_eq!(s.n_child_pairs(), 4);
        s.validate().unwrap();
    }

    #[test]
    fn duplicate_trees_are_idempotent() {
        let one = SbnSupport::from_samples(&quartet()).unwrap();
        let two = TreeSampleSet::parse("((A,B),(C,D));\n((B,A),(D,C));", None).unwrap();
        assert_eq!(SbnSupport::from_samples(&two).unwrap(), one);
    }

    #[test]
    fn empty_rejected() {
        let t = TaxonSet::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        assert!(SbnSupport::from_trees(t, &[]).is_err());
    }

    #[test]
    fn full_support_counts() {
        // Every rooted 5-taxon tree: 105 of them.
        let trees = TreeTopology::enumerate_all(5).unwrap();
        let taxa = TaxonSet::new(crate::phylo::simulate::default_names(5)).unwrap();
        let s = SbnSupport::from_trees(taxa, &trees).unwrap();
        // Root subsplits: all bipartitions of 5 taxa, 2^4 - 1 = 15.
        assert_eq!(s.root_subsplits().len(), 15);
        for t in &trees {
            assert!(s.contains(t));
        }
    }
}
