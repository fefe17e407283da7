//! JSON form of a support and its logits.
//!
//! ```text
//! {
//!   "conditionals": [{"children": [{"logit": 0.0, "subsplit": ["3", "4"]}],
//!                     "clade": "7", "sister": "8"}],
//!   "format": "sivbpi-sbn",
//!   "roots": [{"logit": 0.0, "subsplit": ["1", "e"]}],
//!   "taxa": ["A", "B", "C", "D"],
//!   "version": 1
//! }
//! ```
//! Keys are sorted and clades are hexadecimal bitsets (bit `i` is taxon `i`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqio::TaxonSet;

use super::clade::{Clade, ParentContext, Subsplit};
use super::model::SbnModel;
use super::support::SbnSupport;

const FORMAT: &str = "sivbpi-sbn";
const VERSION: u32 = 1;

// Field order is alphabetical so serialized keys come out sorted.
#[derive(Serialize, Deserialize)]
struct Entry {
    logit: f64,
    subsplit: [String; 2],
}

#[derive(Serialize, Deserialize)]
struct Group {
    children: Vec<Entry>,
    clade: String,
    sister: String,
}

#[derive(Serialize, Deserialize)]
struct File {
    conditionals: Vec<Group>,
    format: String,
    roots: Vec<Entry>,
    taxa: Vec<String>,
    version: u32,
}

fn clade(s: &str) -> Result<Clade> {
    Clade::from_hex(s)
        .filter(|c| !c.is_empty())
        .ok_or_else(|| Error::Parse(format!("bad clade bitset `{s}`")))
}

fn entry(s: &Subsplit, logit: f64) -> Entry {
    Entry {
        logit,
        subsplit: [s.big.to_hex(), s.small.to_hex()],
    }
}

fn subsplit(e: &Entry) -> Result<Subsplit> {
    let (a, b) = (clade(&e.subsplit[0])?, clade(&e.subsplit[1])?);
    if !a.is_disjoint(b) {
        return Err(Error::Parse(format!("overlapping subsplit {:?}", e.subsplit)));
    }
    Ok(Subsplit::new(a, b))
}

impl SbnModel {
    pub fn to_json(&self) -> String {
        let s = self.support();
        let l = self.logits();
        let roots = s.root_subsplits().iter().zip(&l[s.group_range(0)]).map(|(x, &v)| entry(x, v)).collect();
        let conditionals = s
            .contexts()
            .iter()
            .enumerate()
            .map(|(g, ctx)| Group {
                children: s
                    .children(g)
                    .iter()
                    .zip(&l[s.group_range(g + 1)])
                    .map(|(x, &v)| entry(x, v))
                    .collect(),
                clade: ctx.clade.to_hex(),
                sister: ctx.sister.to_hex(),
            })
            .collect();
        let file = File {
            conditionals,
            format: FORMAT.into(),
            roots,
            taxa: s.taxa().names().to_vec(),
            version: VERSION,
        };
        serde_json::to_string_pretty(&file).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<SbnModel> {
        let file: File = serde_json::from_str(text)?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(Error::Parse(format!(
                "unsupported SBN file `{}` version {}",
                file.format, file.version
            )));
        }
        let taxa = TaxonSet::new(file.taxa)?;
        let mut logits = Vec::new();
        let mut roots = Vec::with_capacity(file.roots.len());
        for e in &file.roots {
            roots.push(subsplit(e)?);
            logits.push(e.logit);
        }
        let mut groups = Vec::with_capacity(file.conditionals.len());
        for g in &file.conditionals {
            let ctx = ParentContext {
                clade: clade(&g.clade)?,
                sister: clade(&g.sister)?,
            };
            let mut kids = Vec::with_capacity(g.children.len());
            for e in &g.children {
                kids.push(subsplit(e)?);
                logits.push(e.logit);
            }
            if kids.is_empty() {
                return Err(Error::Parse(format!("context {} has no children", g.clade)));
            }
            groups.push((ctx, kids));
        }
        if roots.is_empty() {
            return Err(Error::Parse("SBN file has no root subsplits".into()));
        }
        let support = SbnSupport::from_parts(taxa, roots, groups);
        support.validate()?;
        SbnModel::with_logits(support, logits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SbnModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
