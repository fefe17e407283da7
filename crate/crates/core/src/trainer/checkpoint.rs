//! Binary checkpoint container.
//!
//! ```text
//! "SIVBPICK" | u32 version | u64 metadata length | u64 FNV-1a of the rest
//! metadata (JSON) | f64 arrays, little endian, in metadata order
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{model_arrays, AdamState, OptimizerState, TrainConfig, Trainer};
use crate::bounds::Variational;
use crate::error::{Error, Result};
use crate::phylo::TreeTopology;
use crate::sbn::SbnModel;
use crate::seqio::{Alignment, AlignmentFormat};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"SIVBPICK";
const HEADER: usize = 8 + 4 + 8 + 8;

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    n_taxa: usize,
    iteration: u64,
    config: BTreeMap<String, String>,
    sbn: String,
    alignment: String,
    fixed_tree: Option<Vec<(usize, usize)>>,
    adam_steps: [u64; 3],
    arrays: Vec<ArrayEntry>,
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn all_arrays(model: &Variational, opt: &OptimizerState) -> Vec<(String, Vec<f64>)> {
    let mut v = model_arrays(model);
    for (name, s) in [("topology", &opt.topology), ("branch", &opt.branch), ("reverse", &opt.reverse)] {
        v.push((format!("adam.{name}.m"), s.m.clone()));
        v.push((format!("adam.{name}.v"), s.v.clone()));
    }
    v
}

impl Trainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (model, opt) = self.parts();
        let arrays = all_arrays(model, opt);
        let meta = Meta {
            n_taxa: model.n_taxa(),
            iteration: self.iteration(),
            config: self.config().to_map(),
            sbn: model.sbn.to_json(),
            alignment: self.alignment().to_fasta(),
            fixed_tree: self.fixed_tree().map(|t| t.edges().to_vec()),
            adam_steps: [opt.topology.step, opt.branch.step, opt.reverse.step],
            arrays: arrays.iter().map(|(n, a)| ArrayEntry { name: n.clone(), len: a.len() }).collect(),
        };
        let meta = serde_json::to_vec(&meta).expect("serializable");
        let mut payload = Vec::with_capacity(arrays.iter().map(|(_, a)| a.len() * 8).sum());
        for (_, a) in &arrays {
            for x in a {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(HEADER + meta.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&fnv1a(&[&meta, &payload]).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
        if bytes.len() < HEADER || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("version {version}, expected {CHECKPOINT_VERSION}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let checksum = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
        let rest = &bytes[HEADER..];
        if meta_len > rest.len() {
            return Err(corrupt("truncated metadata"));
        }
        let (meta_bytes, payload) = rest.split_at(meta_len);
        if fnv1a(&[meta_bytes, payload]) != checksum {
            return Err(corrupt("checksum mismatch"));
        }
        let meta: Meta = serde_json::from_slice(meta_bytes).map_err(|e| corrupt(format!("metadata: {e}")))?;
        let config = TrainConfig::from_map(meta.config.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        let sbn = SbnModel::from_json(&meta.sbn)?;
        let alignment = Alignment::parse(&meta.alignment, AlignmentFormat::Fasta)?;
        if sbn.support().n_taxa() != meta.n_taxa || alignment.n_taxa() != meta.n_taxa {
            return Err(corrupt(format!(
                "taxon count {} disagrees with the stored support ({}) or alignment ({})",
                meta.n_taxa,
                sbn.support().n_taxa(),
                alignment.n_taxa()
            )));
        }
        let mut model = Variational::init(sbn.support().clone(), config.objective, config.model, config.seed);
        let mut optimizer = OptimizerState::for_model(&model);
        let expected = all_arrays(&model, &optimizer);
        if expected.len() != meta.arrays.len()
            || expected.iter().zip(&meta.arrays).any(|((n, a), e)| *n != e.name || a.len() != e.len)
        {
            return Err(corrupt("array layout does not match the stored configuration"));
        }
        let total: usize = meta.arrays.iter().map(|e| e.len).sum();
        if payload.len() != total * 8 {
            return Err(corrupt(format!("{} payload bytes for {total} values", payload.len())));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |dst: &mut [f64]| dst.iter_mut().for_each(|x| *x = values.next().expect("sized"));
        take(model.sbn.logits_mut());
        for t in model.branch.tensors_mut() {
            take(t.data_mut());
        }
        if let Some(r) = model.reverse.as_mut() {
            for t in r.tensors_mut() {
                take(t.data_mut());
            }
        }
        let states: [&mut AdamState; 3] = [&mut optimizer.topology, &mut optimizer.branch, &mut optimizer.reverse];
        for (s, step) in states.into_iter().zip(meta.adam_steps) {
            take(&mut s.m);
            take(&mut s.v);
            s.step = step;
        }
        let fixed_tree = match meta.fixed_tree {
            Some(edges) => Some(TreeTopology::from_edges(meta.n_taxa, edges)?),
            None => None,
        };
        Trainer::from_parts(config, alignment, model, optimizer, meta.iteration, fixed_tree)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write then rename, so an interrupted save never leaves half a file.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Trainer> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint that must have been trained on `alignment`'s taxa.
    pub fn load_for(path: &Path, alignment: &Alignment) -> Result<Trainer> {
        let t = Self::load(path)?;
        let mut want = alignment.taxon_names().to_vec();
        let mut have = t.alignment().taxon_names().to_vec();
        want.sort();
        have.sort();
        if want != have {
            return Err(Error::TaxonMismatch(format!(
                "checkpoint has {} taxa, alignment {}",
                have.len(),
                want.len()
            )));
        }
        Ok(t)
    }
}
