use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// One line of a run's trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    /// Mean objective over this iteration's samples.
    pub objective: f64,
    /// `‖δ‖₂` after the update and projection.
    pub delta_norm: f64,
    /// Wall clock per victim call, in sample order.
    pub latencies_ms: Vec<f64>,
}

/// Writes one JSON object per line.
pub fn write_trace(path: impl AsRef<Path>, records: &[IterationRecord]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_trace(path: impl AsRef<Path>) -> std::io::Result<Vec<IterationRecord>> {
    BufReader::new(File::open(path)?)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}
