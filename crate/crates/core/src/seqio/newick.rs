//! Newick reading and writing for unrooted bifurcating trees.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::phylo::{BranchLengths, TreeTopology};

/// Ordered taxon names with a name-to-id lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonSet {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl TaxonSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::DuplicateTaxon(n.clone()));
            }
        }
        Ok(TaxonSet { names, index })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// A parsed tree: canonical topology plus branch lengths when every edge
/// carried one.
#[derive(Debug, Clone)]
pub struct ParsedTree {
    pub topology: TreeTopology,
    pub lengths: Option<BranchLengths>,
}

#[derive(Debug, Default)]
struct RawNode {
    name: Option<String>,
    length: Option<f64>,
    children: Vec<usize>,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    nodes: Vec<RawNode>,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            // [comments]
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'[' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b']' {
                    self.pos += 1;
                }
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("newick: {msg} at byte {}", self.pos))
    }

    fn label(&mut self) -> Result<Option<String>> {
        match self.peek() {
            Some(b'\'') => {
                self.pos += 1;
                let mut out = String::new();
                loop {
                    match self.bytes.get(self.pos) {
                        None => return Err(self.err("unterminated quoted label")),
                        Some(b'\'') if self.bytes.get(self.pos + 1) == Some(&b'\'') => {
                            out.push('\'');
                            self.pos += 2;
                        }
                        Some(b'\'') => {
                            self.pos += 1;
                            break;
                        }
                        Some(&c) => {
                            out.push(c as char);
                            self.pos += 1;
                        }
                    }
                }
                Ok(Some(out))
            }
            _ => {
                let start = self.pos;
                while let Some(&c) = self.bytes.get(self.pos) {
                    if matches!(c, b'(' | b')' | b',' | b':' | b';' | b'[') || c.is_ascii_whitespace() {
                        break;
                    }
                    self.pos += 1;
                }
                if self.pos == start {
                    Ok(None)
                } else {
                    let s = std::str::from_utf8(&self.bytes[start..self.pos])
                        .map_err(|_| self.err("label is not UTF-8"))?;
                    Ok(Some(s.to_string()))
                }
            }
        }
    }

    fn length(&mut self) -> Result<Option<f64>> {
        if self.peek() != Some(b':') {
            return Ok(None);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while let Some(&c) = self.bytes.get(self.pos) {
            if c.is_ascii_digit() || matches!(c, b'.' | b'-' | b'+' | b'e' | b'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii");
        s.parse::<f64>()
            .map(Some)
            .map_err(|_| self.err(&format!("bad branch length `{s}`")))
    }

    fn subtree(&mut self) -> Result<usize> {
        let id = self.nodes.len();
        self.nodes.push(RawNode::default());
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut children = Vec::new();
            loop {
                children.push(self.subtree()?);
                match self.peek() {
                    Some(b',') => self.pos += 1,
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected `,` or `)`")),
                }
            }
            self.nodes[id].children = children;
            // Internal labels (e.g. support values) are ignored.
            let _ = self.label()?;
        } else {
            let name = self.label()?.ok_or_else(|| self.err("missing leaf label"))?;
            self.nodes[id].name = Some(name);
        }
        self.nodes[id].length = self.length()?;
        Ok(id)
    }
}

/// Parses one Newick tree over `taxa`. A bifurcating root is suppressed and
/// its two incident branch lengths are summed into the merged edge.
pub fn parse_newick(text: &str, taxa: &TaxonSet) -> Result<ParsedTree> {
    let mut p = Parser {
        bytes: text.trim().as_bytes(),
        pos: 0,
        nodes: Vec::new(),
    };
    if p.peek().is_none() {
        return Err(Error::Empty("empty newick string".into()));
    }
    let root = p.subtree()?;
    match p.peek() {
        Some(b';') => p.pos += 1,
        None => {}
        _ => return Err(p.err("expected `;`")),
    }
    if p.peek().is_some() {
        return Err(p.err("trailing characters"));
    }
    build(&p.nodes, root, taxa)
}

fn build(nodes: &[RawNode], root: usize, taxa: &TaxonSet) -> Result<ParsedTree> {
    let n = taxa.len();
    let mut leaf_count = 0;
    let mut seen = vec![false; n];
    let mut node_id = vec![usize::MAX; nodes.len()];
    let mut next_internal = n;
    for (i, node) in nodes.iter().enumerate() {
        if node.children.is_empty() {
            let name = node.name.as_deref().expect("leaves carry names");
            let t = taxa.id(name).ok_or_else(|| Error::UnknownLeaf(name.to_string()))?;
            if seen[t] {
                return Err(Error::RepeatedLeaf(name.to_string()));
            }
            seen[t] = true;
            leaf_count += 1;
            node_id[i] = t;
        } else {
            let want_ok = if i == root {
                matches!(node.children.len(), 2 | 3)
            } else {
                node.children.len() == 2
            };
            if !want_ok {
                return Err(Error::NonBinary(node.children.len()));
            }
            node_id[i] = next_internal;
            next_internal += 1;
        }
    }
    if leaf_count < 3 {
        return Err(Error::TooFewTaxa(leaf_count));
    }
    if leaf_count != n {
        let missing: Vec<&str> = (0..n).filter(|&t| !seen[t]).map(|t| taxa.names()[t].as_str()).collect();
        return Err(Error::TaxonMismatch(format!("tree is missing taxa {missing:?}")));
    }
    let mut edges = Vec::with_capacity(2 * n - 3);
    let mut lengths = Vec::with_capacity(2 * n - 3);
    let mut all_lengths = true;
    let mut push = |a: usize, b: usize, l: Option<f64>| {
        edges.push((a, b));
        match l {
            Some(x) => lengths.push(x),
            None => {
                all_lengths = false;
                lengths.push(0.0);
            }
        }
    };
    let root_kids = &nodes[root].children;
    let derooted = root_kids.len() == 2;
    for (i, node) in nodes.iter().enumerate() {
        if i == root || (derooted && root_kids.contains(&i)) {
            continue;
        }
        // Parent lookup: every non-root node is listed as a child once.
        let parent = nodes
            .iter()
            .position(|pn| pn.children.contains(&i))
            .expect("non-root node has a parent");
        push(node_id[parent], node_id[i], node.length);
    }
    if derooted {
        let (a, b) = (root_kids[0], root_kids[1]);
        let merged = match (nodes[a].length, nodes[b].length) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
        push(node_id[a], node_id[b], merged);
    }
    // Derooting leaves one internal id unused; compact the numbering.
    if derooted {
        let unused = node_id[root];
        for e in edges.iter_mut() {
            for v in [&mut e.0, &mut e.1] {
                if *v > unused {
                    *v -= 1;
                }
            }
        }
    }
    if derooted && nodes[root_kids[0]].children.is_empty() && nodes[root_kids[1]].children.is_empty() {
        return Err(Error::TooFewTaxa(2));
    }
    let tree = TreeTopology::from_edges(n, edges)?;
    let (canon, order) = tree.canonical_with_map();
    let lengths = if all_lengths {
        for &l in &lengths {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::InvalidBranchLength(l));
            }
        }
        Some(BranchLengths::new(order.iter().map(|&i| lengths[i]).collect()))
    } else {
        None
    };
    Ok(ParsedTree {
        topology: canon,
        lengths,
    })
}

fn quote(name: &str) -> String {
    if name
        .bytes()
        .any(|c| matches!(c, b'(' | b')' | b',' | b':' | b';' | b'[' | b']' | b'\'') || c.is_ascii_whitespace())
    {
        format!("'{}'", name.replace('\'', "''"))
    } else {
        name.to_string()
    }
}

/// Writes an unrooted tree as a trifurcation at the neighbor of taxon 0.
/// Lengths print in shortest round-trip form.
pub fn write_newick(tree: &TreeTopology, lengths: Option<&BranchLengths>, taxa: &TaxonSet) -> String {
    fn rec(
        out: &mut String,
        tree: &TreeTopology,
        v: usize,
        parent: usize,
        lengths: Option<&BranchLengths>,
        taxa: &TaxonSet,
    ) {
        if tree.is_leaf(v) {
            out.push_str(&quote(&taxa.names()[v]));
        } else {
            out.push('(');
            let mut first = true;
            for &w in tree.neighbors(v) {
                if w == parent {
                    continue;
                }
                if !first {
                    out.push(',');
                }
                first = false;
                rec(out, tree, w, v, lengths, taxa);
            }
            out.push(')');
        }
        if let Some(q) = lengths {
            let e = tree.edge_between(v, parent).expect("adjacent");
            let _ = write!(out, ":{}", q.values()[e]);
        }
    }
    let root = tree.neighbors(0)[0];
    let mut out = String::from("(");
    for (i, &w) in tree.neighbors(root).iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        rec(&mut out, tree, w, root, lengths, taxa);
    }
    out.push_str(");");
    out
}

/// Parses one tree per nonempty line.
pub fn parse_newick_lines(text: &str, taxa: &TaxonSet) -> Result<Vec<ParsedTree>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| parse_newick(l, taxa))
        .collect()
}

/// Leaf labels in order of first appearance.
pub fn leaf_labels(text: &str) -> Result<Vec<String>> {
    let mut p = Parser {
        bytes: text.trim().as_bytes(),
        pos: 0,
        nodes: Vec::new(),
    };
    p.subtree()?;
    Ok(p.nodes.into_iter().filter_map(|n| if n.children.is_empty() { n.name } else { None }).collect())
}
