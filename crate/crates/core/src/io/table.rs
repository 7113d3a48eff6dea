//! CSV score tables: one row per retained primitive with its change scores.
//! Floats use Rust's shortest round-trip formatting, so tables are
//! byte-stable across runs and parse back exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::IoError;
use crate::aggregate::PrimitiveScores;

pub const SCORE_TABLE_HEADER: &str = "primitive_id,delta_geo,delta_app,omega,delta_combined";

/// Write the score table. `primitive_ids` are the original (pre-filter)
/// vertex indices, aligned with `scores`.
pub fn write_score_table<W: Write>(
    mut w: W,
    primitive_ids: &[usize],
    scores: &[PrimitiveScores],
) -> Result<(), IoError> {
    if primitive_ids.len() != scores.len() {
        return Err(IoError::Format(format!(
            "score table: {} ids vs {} score rows",
            primitive_ids.len(),
            scores.len()
        )));
    }
    writeln!(w, "{SCORE_TABLE_HEADER}")?;
    for (id, s) in primitive_ids.iter().zip(scores) {
        writeln!(
            w,
            "{id},{},{},{},{}",
            s.geometric, s.appearance, s.confidence, s.combined
        )?;
    }
    Ok(())
}

/// Write the score table to a file path.
pub fn save_score_table(
    path: &Path,
    primitive_ids: &[usize],
    scores: &[PrimitiveScores],
) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_score_table(&mut w, primitive_ids, scores)?;
    w.flush()?;
    Ok(())
}
