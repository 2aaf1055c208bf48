//! CSV export of graph edge lists.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::simgraph::{Edge, Stage};

/// Writes `l,k,weight` rows preceded by a comment line with the matrix size
/// and stage.
pub fn write_edges<W: Write>(mut out: W, size: usize, stage: Stage, edges: &[Edge]) -> Result<()> {
    writeln!(out, "# N={size} stage={}", stage.name())?;
    writeln!(out, "l,k,weight")?;
    for e in edges {
        writeln!(out, "{},{},{:e}", e.l, e.k, e.weight)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_edges(path: impl AsRef<Path>, size: usize, stage: Stage, edges: &[Edge]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_edges(file, size, stage, edges)
}
