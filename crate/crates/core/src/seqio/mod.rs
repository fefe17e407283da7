//! Alignments, Newick trees, tree sample files and metric output.

pub mod alignment;
pub mod metrics;
pub mod newick;
pub mod samples;

pub use alignment::{state_mask, Alignment, AlignmentFormat};
pub use metrics::{format_value, read_metrics, write_metrics, MetricRecord, MetricsWriter};
pub use newick::{parse_newick, parse_newick_lines, write_newick, ParsedTree, TaxonSet};
pub use samples::{align_lengths, ReferenceSampleSet, TreeSampleSet};

use std::path::Path;

use crate::error::{Error, Result};

/// Reads an alignment, picking the format from the extension when `format`
/// is `None` (anything but `.phy`/`.phylip` is read as FASTA).
pub fn read_alignment(path: &Path, format: Option<AlignmentFormat>) -> Result<Alignment> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let format = format.unwrap_or_else(|| {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("phy") | Some("phylip") => AlignmentFormat::Phylip,
            _ => AlignmentFormat::Fasta,
        }
    });
    Alignment::parse(&text, format)
}
