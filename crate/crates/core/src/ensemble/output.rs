use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::stats::{mean_estimate, Bootstrap, Estimate};
use super::{weight, EnsembleAccumulator};
use crate::dynamics::OperatorSet;
use crate::error::{Error, Result};
use crate::hilbert::{trace_distance, DensityMatrix, C64, ZERO};

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

fn entry_columns(dim: usize, suffix: &str) -> Vec<String> {
    let mut cols = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            cols.push(format!("rho_{i}_{j}_re{suffix}"));
            cols.push(format!("rho_{i}_{j}_im{suffix}"));
        }
    }
    cols
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

/// Unweighted mean over trajectories of `Σ_j Var(L_j)` in the normalized states.
fn mean_variance(acc: &EnsembleAccumulator, ops: &OperatorSet, k: usize) -> Estimate {
    let mut w = Vec::with_capacity(acc.len());
    let mut num = Vec::with_capacity(acc.len());
    for psi in acc.states_at(k) {
        let phi = psi.normalized();
        let v: f64 = ops
            .couplings()
            .iter()
            .map(|l| (phi.expectation(&l.mul(l)).re - phi.expectation(l).re.powi(2)).max(0.0))
            .sum();
        let wr = weight(psi);
        num.push(wr * v);
        w.push(wr);
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        let mean = num.iter().sum::<f64>() / total;
        // delta-method standard error of the weighted mean
        let n = w.len() as f64;
        let wbar = total / n;
        let var = num.iter().zip(&w).map(|(x, wr)| (x - mean * wr).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Estimate { value: C64::new(mean, 0.0), std_error: (var / n).sqrt() / wbar }
    } else {
        mean_estimate(&[])
    }
}

/// Per-checkpoint ensemble CSV: `t`, upper-triangle entries of the estimate
/// selected by `boot.measure` with bootstrap errors, mean squared norm, mean
/// `Var(L)` under the reweighted measure, and trace distance to `reference`
/// with its bootstrap band.
pub fn write_ensemble_csv<W: Write>(
    writer: W,
    acc: &EnsembleAccumulator,
    boot: &Bootstrap,
    ops: &OperatorSet,
    reference: Option<&[DensityMatrix]>,
) -> Result<()> {
    let dim = acc.dim();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(entry_columns(dim, ""));
    header.extend(entry_columns(dim, "_se"));
    header.extend(
        ["mean_sq_norm", "mean_sq_norm_se", "mean_varL", "mean_varL_se", "trace_distance_to_ref", "trace_distance_se"]
            .map(String::from),
    );
    w.write_record(&header).map_err(csv_err)?;
    for (k, &t) in acc.times().iter().enumerate() {
        let rho = &boot.point[k];
        let mut row = vec![fmt(t)];
        for i in 0..dim {
            for j in i..dim {
                row.push(fmt(rho.entry(i, j).re));
                row.push(fmt(rho.entry(i, j).im));
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let (re, im) = boot.entry_se(k, i, j);
                row.push(fmt(re));
                row.push(fmt(im));
            }
        }
        let norm = acc.mean_sq_norm(k);
        let var = mean_variance(acc, ops, k);
        row.push(fmt(norm.value.re));
        row.push(fmt(norm.std_error));
        row.push(fmt(var.value.re));
        row.push(fmt(var.std_error));
        match reference {
            Some(r) => row.push(fmt(trace_distance(rho, &r[k])?)),
            None => row.push(String::new()),
        }
        row.push(fmt(boot.trace_distance_se(k)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(())
}

/// Reference CSV: `t` and the upper-triangle entries of `ρ(t)`.
pub fn write_reference_csv<W: Write>(writer: W, times: &[f64], rhos: &[DensityMatrix]) -> Result<()> {
    let dim = rhos.first().map_or(0, DensityMatrix::dim);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(entry_columns(dim, ""));
    w.write_record(&header).map_err(csv_err)?;
    for (t, rho) in times.iter().zip(rhos) {
        let mut row = vec![fmt(*t)];
        for i in 0..dim {
            for j in i..dim {
                row.push(fmt(rho.entry(i, j).re));
                row.push(fmt(rho.entry(i, j).im));
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(())
}

/// Density matrices recovered from an ensemble or reference CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSeries {
    pub times: Vec<f64>,
    pub rho: Vec<DensityMatrix>,
}

/// Reads the `t` and `rho_i_j_{re,im}` columns of either CSV kind.
pub fn read_rho_csv<R: Read>(reader: R) -> Result<CsvSeries> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let t_col = col("t").ok_or_else(|| Error::InvalidInput("csv has no 't' column".into()))?;
    let mut dim = 0;
    while col(&format!("rho_{dim}_{dim}_re")).is_some() {
        dim += 1;
    }
    if dim == 0 {
        return Err(Error::InvalidInput("csv has no density-matrix columns".into()));
    }
    let mut positions = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            let re = col(&format!("rho_{i}_{j}_re"));
            let im = col(&format!("rho_{i}_{j}_im"));
            match (re, im) {
                (Some(re), Some(im)) => positions.push((i, j, re, im)),
                _ => return Err(Error::InvalidInput(format!("csv lacks entry ({i},{j})"))),
            }
        }
    }
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::InvalidInput(format!("csv value '{s}': {e}")));
    let mut series = CsvSeries { times: Vec::new(), rho: Vec::new() };
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        series.times.push(parse(&rec[t_col])?);
        let mut m = DMatrix::from_element(dim, dim, ZERO);
        for &(i, j, re, im) in &positions {
            let z = C64::new(parse(&rec[re])?, parse(&rec[im])?);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
        series.rho.push(DensityMatrix::from_raw(m));
    }
    Ok(series)
}
