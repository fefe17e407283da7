use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentFormat {
    Fasta,
    Phylip,
}

impl std::str::FromStr for AlignmentFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fasta" | "fa" | "fas" | "fna" => Ok(AlignmentFormat::Fasta),
            "phylip" | "phy" => Ok(AlignmentFormat::Phylip),
            other => Err(Error::InvalidArgument(format!("unknown alignment format `{other}`"))),
        }
    }
}

/// Aligned nucleotide sequences, one row per taxon.
///
/// Characters are stored uppercased as read; IUPAC ambiguity codes are kept
/// and gaps (`-`, `?`, `.`) become `-`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    taxon_names: Vec<String>,
    rows: Vec<Vec<u8>>,
}

/// Bit mask of the nucleotide states compatible with an alignment character
/// (A=1, C=2, G=4, T=8).
pub fn state_mask(ch: u8) -> Option<u8> {
    Some(match ch.to_ascii_uppercase() {
        b'A' => 0b0001,
        b'C' => 0b0010,
        b'G' => 0b0100,
        b'T' | b'U' => 0b1000,
        b'R' => 0b0101,
        b'Y' => 0b1010,
        b'S' => 0b0110,
        b'W' => 0b1001,
        b'K' => 0b1100,
        b'M' => 0b0011,
        b'B' => 0b1110,
        b'D' => 0b1101,
        b'H' => 0b1011,
        b'V' => 0b0111,
        b'N' | b'X' | b'-' | b'?' | b'.' => 0b1111,
        _ => return None,
    })
}

fn normalize(name: &str, seq: &[u8]) -> Result<Vec<u8>> {
    seq.iter()
        .map(|&c| {
            if state_mask(c).is_none() {
                return Err(Error::InvalidCharacter {
                    name: name.to_string(),
                    ch: c as char,
                });
            }
            Ok(match c.to_ascii_uppercase() {
                b'?' | b'.' => b'-',
                b'U' => b'T',
                other => other,
            })
        })
        .collect()
}

impl Alignment {
    /// Builds an alignment, checking for equal row lengths and unique names.
    pub fn new(taxon_names: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        if taxon_names.is_empty() {
            return Err(Error::Empty("alignment has no sequences".into()));
        }
        if taxon_names.len() != rows.len() {
            return Err(Error::Dimension("names and rows differ in count".into()));
        }
        let mut seen = HashSet::new();
        for name in &taxon_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateTaxon(name.clone()));
            }
        }
        let expected = rows[0].len();
        let mut normalized = Vec::with_capacity(rows.len());
        for (name, row) in taxon_names.iter().zip(&rows) {
            if row.len() != expected {
                return Err(Error::RaggedRows {
                    name: name.clone(),
                    expected,
                    found: row.len(),
                });
            }
            normalized.push(normalize(name, row)?);
        }
        if expected == 0 {
            return Err(Error::Empty("alignment has no sites".into()));
        }
        Ok(Alignment {
            taxon_names,
            rows: normalized,
        })
    }

    pub fn parse(text: &str, format: AlignmentFormat) -> Result<Self> {
        match format {
            AlignmentFormat::Fasta => parse_fasta(text),
            AlignmentFormat::Phylip => parse_phylip(text),
        }
    }

    pub fn n_taxa(&self) -> usize {
        self.taxon_names.len()
    }

    pub fn n_sites(&self) -> usize {
        self.rows[0].len()
    }

    pub fn taxon_names(&self) -> &[String] {
        &self.taxon_names
    }

    pub fn row(&self, taxon: usize) -> &[u8] {
        &self.rows[taxon]
    }

    pub fn taxon_index(&self, name: &str) -> Option<usize> {
        self.taxon_names.iter().position(|n| n == name)
    }

    /// Rows reordered to follow `names`, which must be a permutation of this
    /// alignment's taxon names.
    pub fn reordered(&self, names: &[String]) -> Result<Alignment> {
        if names.len() != self.n_taxa() {
            return Err(Error::TaxonMismatch(format!(
                "{} names for an alignment of {} taxa",
                names.len(),
                self.n_taxa()
            )));
        }
        let mut rows = Vec::with_capacity(names.len());
        for name in names {
            let i = self
                .taxon_index(name)
                .ok_or_else(|| Error::TaxonMismatch(format!("`{name}` not in alignment")))?;
            rows.push(self.rows[i].clone());
        }
        Alignment::new(names.to_vec(), rows)
    }

    pub fn to_fasta(&self) -> String {
        let mut out = String::new();
        for (name, row) in self.taxon_names.iter().zip(&self.rows) {
            let _ = writeln!(out, ">{name}");
            out.push_str(std::str::from_utf8(row).expect("ascii"));
            out.push('\n');
        }
        out
    }
}

fn parse_fasta(text: &str) -> Result<Alignment> {
    let mut names = Vec::new();
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let name = header.split_whitespace().next().unwrap_or("").to_string();
            if name.is_empty() {
                return Err(Error::Parse("FASTA record without a name".into()));
            }
            names.push(name);
            rows.push(Vec::new());
        } else {
            let row = rows
                .last_mut()
                .ok_or_else(|| Error::Parse("sequence data before the first FASTA header".into()))?;
            row.extend(line.bytes().filter(|b| !b.is_ascii_whitespace()));
        }
    }
    if names.is_empty() {
        return Err(Error::Empty("no FASTA records".into()));
    }
    Alignment::new(names, rows)
}

/// Relaxed PHYLIP: whitespace-separated names of any length, sequential or
/// interleaved.
fn parse_phylip(text: &str) -> Result<Alignment> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::Empty("empty PHYLIP file".into()))?;
    let mut dims = header.split_whitespace().map(str::parse::<usize>);
    let (n, s) = match (dims.next(), dims.next()) {
        (Some(Ok(n)), Some(Ok(s))) => (n, s),
        _ => return Err(Error::Parse(format!("bad PHYLIP header `{header}`"))),
    };
    if n == 0 {
        return Err(Error::Empty("PHYLIP header declares no taxa".into()));
    }
    let mut names = Vec::with_capacity(n);
    let mut rows: Vec<Vec<u8>> = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("expected {n} PHYLIP rows")))?;
        let mut parts = line.split_whitespace();
        let name = parts.next().expect("nonempty line").to_string();
        names.push(name);
        rows.push(parts.flat_map(str::bytes).collect());
    }
    // Interleaved blocks continue the rows in order.
    let mut i = 0;
    for line in lines {
        if rows.iter().all(|r| r.len() >= s) {
            return Err(Error::Parse("trailing data after PHYLIP alignment".into()));
        }
        rows[i % n].extend(line.split_whitespace().flat_map(str::bytes));
        i += 1;
    }
    for (name, row) in names.iter().zip(&rows) {
        if row.len() != s {
            return Err(Error::RaggedRows {
                name: name.clone(),
                expected: s,
                found: row.len(),
            });
        }
    }
    Alignment::new(names, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fasta_two_records() {
        let a = Alignment::parse(">x\nAC\n>y\nAC\n", AlignmentFormat::Fasta).unwrap();
        assert_eq!((a.n_taxa(), a.n_sites()), (2, 2));
    }

    #[test]
    fn phylip_sequential() {
        let a = Alignment::parse("3 4\na ACGT\nb AC-T\nc ACGN\n", AlignmentFormat::Phylip).unwrap();
        assert_eq!((a.n_taxa(), a.n_sites()), (3, 4));
        assert_eq!(a.row(2), b"ACGN");
    }

    #[test]
    fn phylip_interleaved() {
        let text = "3 6\na ACG\nb AC-\nc ACG\nTTT\nTTA\nTTC\n";
        let a = Alignment::parse(text, AlignmentFormat::Phylip).unwrap();
        assert_eq!(a.row(1), b"AC-TTA");
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = Alignment::parse(">x\nACGT\n>y\nACGTA\n", AlignmentFormat::Fasta).unwrap_err();
        assert!(matches!(err, Error::RaggedRows { .. }));
        let err = Alignment::parse("2 4\na ACGT\nb ACG\n", AlignmentFormat::Phylip).unwrap_err();
        assert!(matches!(err, Error::RaggedRows { .. }));
    }

    #[test]
    fn duplicate_and_empty_rejected() {
        let err = Alignment::parse(">x\nA\n>x\nA\n", AlignmentFormat::Fasta).unwrap_err();
        assert!(matches!(err, Error::DuplicateTaxon(_)));
        assert!(matches!(
            Alignment::parse("", AlignmentFormat::Fasta).unwrap_err(),
            Error::Empty(_)
        ));
        assert!(Alignment::parse("  \n", AlignmentFormat::Phylip).is_err());
    }

    #[test]
    fn gaps_and_ambiguity() {
        let a = Alignment::parse(">x\nA?R.\n>y\nacgu\n", AlignmentFormat::Fasta).unwrap();
        assert_eq!(a.row(0), b"A-R-");
        assert_eq!(a.row(1), b"ACGT");
        assert_eq!(state_mask(b'R'), Some(0b0101));
        assert!(Alignment::parse(">x\nAZ\n", AlignmentFormat::Fasta).is_err());
    }

    #[test]
    fn reorder_rows() {
        let a = Alignment::parse(">x\nAA\n>y\nCC\n>z\nGG\n", AlignmentFormat::Fasta).unwrap();
        let names: Vec<String> = ["z", "x", "y"].iter().map(|s| s.to_string()).collect();
        let b = a.reordered(&names).unwrap();
        assert_eq!(b.row(0), b"GG");
        assert!(a.reordered(&names[..2]).is_err());
    }
}
