//! Monte Carlo ensembles of trajectories: accumulation, density-matrix
//! estimates under the raw and reweighted measures, error bands and
//! comparison against reference solutions.

mod output;
mod stats;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use output::{read_rho_csv, write_ensemble_csv, write_reference_csv, CsvSeries};
pub use stats::{
    bootstrap, compare_to_reference, localization_stats, norm_average_check, physical_expectation, Bootstrap,
    Comparison, Estimate, LocalizationStats, Measure, NormCheck, BOOTSTRAP_RESAMPLES, NORM_DEVIATION_FLOOR,
    NORM_SIGMAS,
};

use crate::dynamics::{Propagator, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::hilbert::{DensityMatrix, StateVector, C64, ZERO};

/// Per-trajectory checkpoint states, keyed by trajectory index.
///
/// Every statistic is reduced in increasing index order at evaluation time,
/// so merging accumulators built from disjoint index sets (in any order, by
/// any number of workers) gives bit-identical results to a serial run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleAccumulator {
    dim: usize,
    times: Vec<f64>,
    records: BTreeMap<u64, Vec<StateVector>>,
}

impl EnsembleAccumulator {
    pub fn new(dim: usize, times: Vec<f64>) -> Self {
        Self { dim, times, records: BTreeMap::new() }
    }

    pub fn push(&mut self, record: TrajectoryRecord) -> Result<()> {
        if record.times != self.times {
            return Err(Error::GridMismatch("trajectory checkpoints differ from the accumulator's".into()));
        }
        if let Some(s) = record.states.iter().find(|s| s.dim() != self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, found: s.dim() });
        }
        if self.records.insert(record.trajectory_index, record.states).is_some() {
            return Err(Error::InvalidInput(format!("trajectory {} accumulated twice", record.trajectory_index)));
        }
        Ok(())
    }

    /// Union of two accumulators over disjoint trajectory sets.
    pub fn merge(mut self, other: EnsembleAccumulator) -> Result<Self> {
        if other.dim != self.dim || other.times != self.times {
            return Err(Error::GridMismatch("cannot merge accumulators on different grids".into()));
        }
        for (idx, states) in other.records {
            if self.records.insert(idx, states).is_some() {
                return Err(Error::InvalidInput(format!("trajectory {idx} present in both accumulators")));
            }
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Trajectory indices in increasing order.
    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.keys().copied()
    }

    /// States at checkpoint `k`, in index order.
    pub fn states_at(&self, k: usize) -> impl Iterator<Item = &StateVector> + '_ {
        self.records.values().map(move |s| &s[k])
    }

    /// `Σ_r |ψ_r⟩⟨ψ_r|` at checkpoint `k`, exactly Hermitian.
    pub fn sum_outer(&self, k: usize) -> DMatrix<C64> {
        let mut acc = DMatrix::from_element(self.dim, self.dim, ZERO);
        for psi in self.states_at(k) {
            add_outer(&mut acc, psi, 1.0);
        }
        acc
    }

    /// `Σ_r ‖ψ_r‖²` at checkpoint `k`.
    pub fn sum_weights(&self, k: usize) -> f64 {
        self.states_at(k).map(weight).sum()
    }

    /// `ρ̂ = (1/N) Σ_r |ψ_r⟩⟨ψ_r|`.
    pub fn raw_rho(&self, k: usize) -> DensityMatrix {
        let n = self.len().max(1) as f64;
        DensityMatrix::from_raw(self.sum_outer(k).unscale(n))
    }

    /// `Σ_r |ψ_r⟩⟨ψ_r| / Σ_r ‖ψ_r‖²`, the reweighted estimate of the physical state.
    pub fn physical_rho(&self, k: usize) -> DensityMatrix {
        let w = self.sum_weights(k);
        DensityMatrix::from_raw(self.sum_outer(k).unscale(if w > 0.0 { w } else { 1.0 }))
    }

    /// Mean of `‖ψ‖²` and its standard error at checkpoint `k`.
    pub fn mean_sq_norm(&self, k: usize) -> Estimate {
        let w: Vec<f64> = self.states_at(k).map(weight).collect();
        stats::mean_estimate(&w)
    }
}

/// `⟨ψ|ψ⟩`, accumulated the same way as [`quadratic_form`] so that the
/// identity observable reproduces it bit for bit.
pub(crate) fn weight(psi: &StateVector) -> f64 {
    psi.amplitudes().iter().fold(ZERO, |acc, a| acc + a.conj() * a).re
}

/// `⟨ψ|A|ψ⟩` with the loop order of [`weight`].
pub(crate) fn quadratic_form(psi: &StateVector, a: &DMatrix<C64>) -> C64 {
    let v = psi.amplitudes();
    let mut acc = ZERO;
    for i in 0..v.len() {
        let mut row = ZERO;
        let mut diag = ZERO;
        for j in 0..v.len() {
            if i == j {
                diag = a[(i, j)] * v[j];
            } else {
                row += a[(i, j)] * v[j];
            }
        }
        acc += v[i].conj() * diag + v[i].conj() * row;
    }
    acc
}

pub(crate) fn add_outer(acc: &mut DMatrix<C64>, psi: &StateVector, scale: f64) {
    let v = psi.amplitudes();
    let n = v.len();
    for i in 0..n {
        acc[(i, i)] += C64::new(v[i].norm_sqr() * scale, 0.0);
        for j in i + 1..n {
            let e = v[i] * v[j].conj() * scale;
            acc[(i, j)] += e;
            acc[(j, i)] += e.conj();
        }
    }
}

/// Runs trajectories `0..n` of stream `seed` on the current rayon pool and
/// accumulates them in index order. The first failing trajectory (lowest
/// index) is reported.
pub fn run_ensemble(propagator: &Propagator, psi0: &StateVector, n: usize, seed: u64) -> Result<EnsembleAccumulator> {
    let records: Vec<Result<TrajectoryRecord>> =
        (0..n as u64).into_par_iter().map(|r| propagator.run(psi0, seed, r)).collect();
    let mut acc = EnsembleAccumulator::new(psi0.dim(), propagator.grid().checkpoint_times());
    for rec in records {
        acc.push(rec?)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DriftMode, Equation, OperatorSet, Scheme};
    use crate::hilbert::{outer_product, trace_distance, Operator};
    use crate::noise::{KernelPair, TimeGrid};

    fn propagator() -> Propagator {
        let grid = TimeGrid::uniform(0.0, 1e-2, 50, 10).unwrap();
        Propagator::new(
            Equation::LinearWhite,
            &OperatorSet::qubit_sigma_z(),
            &KernelPair::real_white(1),
            DriftMode::GeneralFromKernel,
            &grid,
            Scheme::Rk4,
        )
        .unwrap()
    }

    #[test]
    fn single_trajectory_ensemble_is_its_outer_product() {
        let p = propagator();
        let psi0 = StateVector::uniform(2);
        let acc = run_ensemble(&p, &psi0, 1, 3).unwrap();
        let rec = p.run(&psi0, 3, 0).unwrap();
        for (k, s) in rec.states.iter().enumerate() {
            assert_eq!(acc.raw_rho(k), outer_product(s));
        }
    }

    #[test]
    fn runs_are_deterministic_and_split_invariant() {
        let p = propagator();
        let psi0 = StateVector::uniform(2);
        let a = run_ensemble(&p, &psi0, 200, 9).unwrap();
        let b = run_ensemble(&p, &psi0, 200, 9).unwrap();
        assert_eq!(a, b);
        let times = p.grid().checkpoint_times();
        let mut first = EnsembleAccumulator::new(2, times.clone());
        let mut second = EnsembleAccumulator::new(2, times);
        for r in (0..200u64).rev() {
            let rec = p.run(&psi0, 9, r).unwrap();
            if r % 2 == 0 { first.push(rec).unwrap() } else { second.push(rec).unwrap() }
        }
        let merged = second.merge(first).unwrap();
        for k in 0..a.times().len() {
            assert_eq!(merged.raw_rho(k), a.raw_rho(k));
            assert_eq!(merged.sum_weights(k).to_bits(), a.sum_weights(k).to_bits());
        }
    }

    #[test]
    fn raw_trace_equals_mean_squared_norm() {
        let acc = run_ensemble(&propagator(), &StateVector::uniform(2), 300, 1).unwrap();
        for k in 0..acc.times().len() {
            let rho = acc.raw_rho(k);
            assert!(rho.is_hermitian(0.0));
            assert!((rho.trace().re - acc.mean_sq_norm(k).value.re).abs() < 1e-12);
            let phys = acc.physical_rho(k);
            assert!((phys.trace().re - 1.0).abs() < 1e-12);
            assert!(trace_distance(&phys, &phys).unwrap() == 0.0);
        }
    }

    #[test]
    fn duplicates_and_mismatches_are_rejected() {
        let p = propagator();
        let psi0 = StateVector::uniform(2);
        let mut acc = EnsembleAccumulator::new(2, p.grid().checkpoint_times());
        acc.push(p.run(&psi0, 0, 0).unwrap()).unwrap();
        assert!(acc.push(p.run(&psi0, 0, 0).unwrap()).is_err());
        let other = EnsembleAccumulator::new(2, vec![0.0]);
        assert!(acc.clone().merge(other).is_err());
        let mut twin = EnsembleAccumulator::new(2, p.grid().checkpoint_times());
        twin.push(p.run(&psi0, 0, 0).unwrap()).unwrap();
        assert!(acc.merge(twin).is_err());
    }

    #[test]
    fn identity_form_matches_weight_exactly() {
        let psi = StateVector::from_slice(&[C64::new(0.3, -0.7), C64::new(1.1, 0.2), C64::new(-0.4, 0.9)]).unwrap();
        let q = quadratic_form(&psi, Operator::identity(3).matrix());
        assert_eq!(q.re, weight(&psi));
        assert_eq!(q.im, 0.0);
    }
}
