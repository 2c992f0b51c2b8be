use std::fs::File;
use std::path::Path;

use crate::ensemble::{read_rho_csv, CsvSeries};
use crate::error::{Error, Result};
use crate::hilbert::trace_distance;

/// Checkpoint-wise trace distance between two result files.
#[derive(Debug, Clone, PartialEq)]
pub struct FileComparison {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn load(path: &Path) -> Result<CsvSeries> {
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_rho_csv(f).map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Compares the density matrices stored in two ensemble or reference CSV
/// files; passes iff every distance is at most `tolerance`.
pub fn compare_results(a: impl AsRef<Path>, b: impl AsRef<Path>, tolerance: f64) -> Result<FileComparison> {
    let (sa, sb) = (load(a.as_ref())?, load(b.as_ref())?);
    if sa.times.len() != sb.times.len() || sa.times.iter().zip(&sb.times).any(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(Error::GridMismatch(format!(
            "{} has {} checkpoints, {} has {}",
            a.as_ref().display(),
            sa.times.len(),
            b.as_ref().display(),
            sb.times.len()
        )));
    }
    let distances = sa.rho.iter().zip(&sb.rho).map(|(x, y)| trace_distance(x, y)).collect::<Result<Vec<f64>>>()?;
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    Ok(FileComparison { times: sa.times, pass: max_distance <= tolerance, distances, max_distance, tolerance })
}
