use nalgebra::DMatrix;
use rand::Rng;

use super::{add_outer, quadratic_form, weight, EnsembleAccumulator};
use crate::dynamics::OperatorSet;
use crate::error::{Error, Result};
use crate::hilbert::{trace_distance, DensityMatrix, EigenStructure, StateVector, C64, ZERO};
use crate::noise::stream_rng;

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Significance, in standard errors, at which a mean-norm deviation is flagged.
pub const NORM_SIGMAS: f64 = 5.0;

/// Deviations of the mean squared norm below this size are attributed to
/// integrator error rather than tested statistically.
pub const NORM_DEVIATION_FLOOR: f64 = 1e-6;

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: C64,
    pub std_error: f64,
}

pub(crate) fn mean_estimate(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    if values.is_empty() {
        return Estimate { value: ZERO, std_error: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Estimate { value: C64::new(mean, 0.0), std_error: (var / n).sqrt() }
}

/// Which density-matrix estimate a statistic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    /// `(1/N) Σ |ψ⟩⟨ψ|` under the sampling measure.
    Raw,
    /// `Σ |ψ⟩⟨ψ| / Σ ‖ψ‖²`, reweighted by the squared norms.
    Physical,
}

/// Self-normalized ratio `Σ n_r / Σ w_r` with its jackknife standard error.
fn ratio_jackknife(num: &[C64], w: &[f64]) -> Result<Estimate> {
    let n = w.len();
    if n < 2 {
        return Err(Error::InvalidInput("reweighted estimates need at least two trajectories".into()));
    }
    let total_w: f64 = w.iter().sum();
    let total_n: C64 = num.iter().sum();
    if !(total_w > f64::MIN_POSITIVE * n as f64) {
        return Err(Error::DegenerateWeights { total: total_w });
    }
    let value = total_n / total_w;
    let loo: Vec<C64> = num
        .iter()
        .zip(w)
        .map(|(x, wi)| {
            let rest = total_w - wi;
            if rest > 0.0 { (total_n - x) / rest } else { value }
        })
        .collect();
    let mean_loo = loo.iter().sum::<C64>() / n as f64;
    let var = loo.iter().map(|v| (v - mean_loo).norm_sqr()).sum::<f64>() * (n as f64 - 1.0) / n as f64;
    Ok(Estimate { value, std_error: var.sqrt() })
}

/// Reweighted expectation `Σ_r w_r ⟨φ_r|A|φ_r⟩ / Σ_r w_r` with
/// `w_r = ‖ψ_r(t_k)‖²`, `φ_r = ψ_r/‖ψ_r‖`.
pub fn physical_expectation(acc: &EnsembleAccumulator, observable: &crate::hilbert::Operator, k: usize) -> Result<Estimate> {
    if observable.dim() != acc.dim() {
        return Err(Error::DimensionMismatch { expected: acc.dim(), found: observable.dim() });
    }
    let (num, w): (Vec<C64>, Vec<f64>) = acc
        .states_at(k)
        .map(|psi| (quadratic_form(psi, observable.matrix()), weight(psi)))
        .unzip();
    ratio_jackknife(&num, &w)
}

/// Localization diagnostics under the reweighted measure.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationStats {
    /// Per checkpoint, weighted mean of `Σ_j Var_φ(L_j)`.
    pub mean_variance: Vec<Estimate>,
    /// Final-time weighted frequency of each eigenmanifold; sums to 1.
    pub outcome_frequencies: Vec<f64>,
    pub outcome_std_errors: Vec<f64>,
    /// Final-time manifold of each trajectory, in index order.
    pub labels: Vec<usize>,
}

fn variance_in(psi: &StateVector, ops: &OperatorSet) -> f64 {
    let phi = psi.normalized();
    ops.couplings()
        .iter()
        .map(|l| {
            let e = phi.expectation(l).re;
            let e2 = phi.expectation(&l.mul(l)).re;
            (e2 - e * e).max(0.0)
        })
        .sum()
}

pub fn localization_stats(acc: &EnsembleAccumulator, ops: &OperatorSet, eig: &EigenStructure) -> Result<LocalizationStats> {
    if !ops.is_commuting() || !ops.all_self_adjoint() {
        return Err(Error::NonCommuting);
    }
    let n_check = acc.times().len();
    let mut mean_variance = Vec::with_capacity(n_check);
    for k in 0..n_check {
        let (num, w): (Vec<C64>, Vec<f64>) = acc
            .states_at(k)
            .map(|psi| {
                let wr = weight(psi);
                (C64::new(wr * variance_in(psi, ops), 0.0), wr)
            })
            .unzip();
        mean_variance.push(ratio_jackknife(&num, &w)?);
    }
    let last = n_check - 1;
    let labels: Vec<usize> = acc.states_at(last).map(|psi| eig.dominant_manifold(psi)).collect();
    let w: Vec<f64> = acc.states_at(last).map(weight).collect();
    let n_out = eig.len();
    let mut outcome_frequencies = Vec::with_capacity(n_out);
    let mut outcome_std_errors = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let num: Vec<C64> =
            labels.iter().zip(&w).map(|(&l, &wr)| C64::new(if l == m { wr } else { 0.0 }, 0.0)).collect();
        let est = ratio_jackknife(&num, &w)?;
        outcome_frequencies.push(est.value.re);
        outcome_std_errors.push(est.std_error);
    }
    // The last frequency is the complement so the set sums to 1.
    if let Some((last, rest)) = outcome_frequencies.split_last_mut() {
        *last = 1.0 - rest.iter().sum::<f64>();
    }
    Ok(LocalizationStats { mean_variance, outcome_frequencies, outcome_std_errors, labels })
}

/// Mean squared norm against its conserved value 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NormCheck {
    pub deviation: Vec<f64>,
    pub std_error: Vec<f64>,
    /// `|deviation| > max(NORM_SIGMAS·σ, NORM_DEVIATION_FLOOR)`.
    pub flagged: Vec<bool>,
    pub max_abs_deviation: f64,
}

impl NormCheck {
    pub fn any_flagged(&self) -> bool {
        self.flagged.iter().any(|&f| f)
    }

    /// Largest `|deviation|/σ`, with σ floored at `NORM_DEVIATION_FLOOR/NORM_SIGMAS`
    /// so that a checkpoint is flagged exactly when this exceeds `NORM_SIGMAS`.
    pub fn max_sigmas(&self) -> f64 {
        let floor = NORM_DEVIATION_FLOOR / NORM_SIGMAS;
        self.deviation
            .iter()
            .zip(&self.std_error)
            .map(|(d, s)| d.abs() / s.max(floor))
            .fold(0.0, f64::max)
    }
}

pub fn norm_average_check(acc: &EnsembleAccumulator) -> NormCheck {
    let n_check = acc.times().len();
    let (mut deviation, mut std_error, mut flagged) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..n_check {
        let est = acc.mean_sq_norm(k);
        let d = est.value.re - 1.0;
        deviation.push(d);
        std_error.push(est.std_error);
        flagged.push(d.abs() > (NORM_SIGMAS * est.std_error).max(NORM_DEVIATION_FLOOR));
    }
    let max_abs_deviation = deviation.iter().map(|d| d.abs()).fold(0.0, f64::max);
    NormCheck { deviation, std_error, flagged, max_abs_deviation }
}

/// Bootstrap replicates of the density-matrix estimate at every checkpoint.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub measure: Measure,
    pub point: Vec<DensityMatrix>,
    /// `replicates[b][k]`.
    pub replicates: Vec<Vec<DensityMatrix>>,
}

impl Bootstrap {
    /// RMS over replicates of `D(ρ̂*, ρ̂)` at checkpoint `k`.
    pub fn trace_distance_se(&self, k: usize) -> f64 {
        let n = self.replicates.len() as f64;
        let ss: f64 = self
            .replicates
            .iter()
            .map(|r| trace_distance(&r[k], &self.point[k]).unwrap().powi(2))
            .sum();
        (ss / n).sqrt()
    }

    /// Standard deviation over replicates of a scalar statistic.
    pub fn std_error_of(&self, k: usize, f: impl Fn(&DensityMatrix) -> f64) -> f64 {
        let vals: Vec<f64> = self.replicates.iter().map(|r| f(&r[k])).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    }

    /// Standard errors of `(Re ρ_ij, Im ρ_ij)`.
    pub fn entry_se(&self, k: usize, i: usize, j: usize) -> (f64, f64) {
        (self.std_error_of(k, |r| r.entry(i, j).re), self.std_error_of(k, |r| r.entry(i, j).im))
    }
}

/// Resamples trajectories with replacement `n_resamples` times; resample
/// `b` draws from stream `(seed, b)`.
pub fn bootstrap(acc: &EnsembleAccumulator, measure: Measure, n_resamples: usize, seed: u64) -> Result<Bootstrap> {
    let n = acc.len();
    if n == 0 {
        return Err(Error::InvalidInput("bootstrap of an empty ensemble".into()));
    }
    let n_check = acc.times().len();
    let estimate = |sum: DMatrix<C64>, w: f64| match measure {
        Measure::Raw => DensityMatrix::from_raw(sum.unscale(n as f64)),
        Measure::Physical => DensityMatrix::from_raw(sum.unscale(if w > 0.0 { w } else { 1.0 })),
    };
    let point: Vec<DensityMatrix> = (0..n_check)
        .map(|k| match measure {
            Measure::Raw => acc.raw_rho(k),
            Measure::Physical => acc.physical_rho(k),
        })
        .collect();
    let per_check: Vec<Vec<&StateVector>> = (0..n_check).map(|k| acc.states_at(k).collect()).collect();
    let dim = acc.dim();
    let mut replicates = Vec::with_capacity(n_resamples);
    for b in 0..n_resamples {
        let mut rng = stream_rng(seed, b as u64);
        let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let rep = per_check
            .iter()
            .map(|states| {
                let mut sum = DMatrix::from_element(dim, dim, ZERO);
                let mut w = 0.0;
                for &p in &picks {
                    add_outer(&mut sum, states[p], 1.0);
                    w += weight(states[p]);
                }
                estimate(sum, w)
            })
            .collect();
        replicates.push(rep);
    }
    Ok(Bootstrap { measure, point, replicates })
}

/// Trace-distance series against a reference and its verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub distances: Vec<f64>,
    pub bands: Vec<f64>,
    pub tolerance: f64,
    pub max_distance: f64,
    pub pass: bool,
}

/// `D(ρ̂(t_k), ρ_ref(t_k))` per checkpoint; passes iff every distance is at
/// most `tolerance`.
pub fn compare_to_reference(
    estimate: &[DensityMatrix],
    times: &[f64],
    bands: &[f64],
    reference: &[DensityMatrix],
    reference_times: &[f64],
    tolerance: f64,
) -> Result<Comparison> {
    if estimate.len() != reference.len()
        || times.len() != reference_times.len()
        || times.iter().zip(reference_times).any(|(a, b)| (a - b).abs() > 1e-9)
    {
        return Err(Error::GridMismatch("result and reference checkpoints differ".into()));
    }
    let distances = estimate
        .iter()
        .zip(reference)
        .map(|(a, b)| trace_distance(a, b))
        .collect::<Result<Vec<f64>>>()?;
    let max_distance = distances.iter().copied().fold(0.0, f64::max);
    Ok(Comparison {
        bands: bands.to_vec(),
        pass: distances.iter().all(|d| *d <= tolerance),
        max_distance,
        distances,
        tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{DriftMode, Equation, OperatorSet, Propagator, Scheme};
    use crate::ensemble::run_ensemble;
    use crate::hilbert::{joint_eigenmanifolds, Operator};
    use crate::noise::{KernelPair, TimeGrid};

    fn ensemble(kernel: KernelPair, psi0: &StateVector, n: usize, t_final: f64) -> EnsembleAccumulator {
        let grid = TimeGrid::spanning(0.0, t_final, 1e-2, 50).unwrap();
        let p = Propagator::new(
            Equation::LinearWhite,
            &OperatorSet::qubit_sigma_z(),
            &kernel,
            DriftMode::GeneralFromKernel,
            &grid,
            Scheme::Rk4,
        )
        .unwrap();
        run_ensemble(&p, psi0, n, 21).unwrap()
    }

    #[test]
    fn initial_expectations_are_exact() {
        let psi0 = StateVector::uniform(2);
        let acc = ensemble(KernelPair::real_white(1), &psi0, 50, 1.0);
        let x = physical_expectation(&acc, &Operator::pauli_x(), 0).unwrap();
        assert_eq!(x.value, psi0.expectation(&Operator::pauli_x()));
        for k in 0..acc.times().len() {
            assert_eq!(physical_expectation(&acc, &Operator::identity(2), k).unwrap().value.re, 1.0);
        }
    }

    #[test]
    fn eigenstate_has_sharp_expectation() {
        let acc = ensemble(KernelPair::real_white(1), &StateVector::basis(2, 1), 20, 1.0);
        for k in 0..acc.times().len() {
            let e = physical_expectation(&acc, &Operator::pauli_z(), k).unwrap();
            assert_eq!(e.value.re, -1.0);
            assert_eq!(e.std_error, 0.0);
        }
    }

    #[test]
    fn degenerate_and_tiny_ensembles() {
        let acc = ensemble(KernelPair::real_white(1), &StateVector::uniform(2), 1, 0.1);
        assert!(physical_expectation(&acc, &Operator::pauli_z(), 0).is_err());
        let mut zero = EnsembleAccumulator::new(2, vec![0.0]);
        for r in 0..3 {
            zero.push(crate::dynamics::TrajectoryRecord {
                trajectory_index: r,
                checkpoints: vec![0],
                times: vec![0.0],
                states: vec![StateVector::from_slice(&[ZERO, ZERO]).unwrap()],
                sq_norms: vec![0.0],
            })
            .unwrap();
        }
        assert!(matches!(physical_expectation(&zero, &Operator::pauli_z(), 0), Err(Error::DegenerateWeights { .. })));
    }

    #[test]
    fn outcome_frequencies_sum_to_one() {
        let ops = OperatorSet::qubit_sigma_z();
        let eig = joint_eigenmanifolds(ops.couplings(), 1e-9).unwrap();
        let acc = ensemble(KernelPair::real_white(1), &StateVector::uniform(2), 300, 1.0);
        let loc = localization_stats(&acc, &ops, &eig).unwrap();
        assert_eq!(loc.outcome_frequencies.iter().sum::<f64>(), 1.0);
        assert_eq!(loc.labels.len(), 300);
        assert!(loc.mean_variance[0].value.re > 0.99);
        let noncomm = OperatorSet::new(Operator::pauli_x(), vec![Operator::pauli_z()]).unwrap();
        assert!(matches!(localization_stats(&acc, &noncomm, &eig), Err(Error::NonCommuting)));
    }

    #[test]
    fn norm_check_flags_wrong_drift() {
        let psi0 = StateVector::uniform(2);
        let good = ensemble(KernelPair::real_white(1), &psi0, 500, 1.0);
        assert!(!norm_average_check(&good).any_flagged());
        let grid = TimeGrid::spanning(0.0, 1.0, 1e-2, 50).unwrap();
        let wrong = Propagator::new(
            Equation::LinearWhite,
            &OperatorSet::qubit_sigma_z(),
            &KernelPair::circular_white(1),
            DriftMode::GeneralFromKernel,
            &grid,
            Scheme::Rk4,
        )
        .unwrap()
        .with_drift(Operator::identity(2).scale(C64::new(-1.0, 0.0)))
        .unwrap();
        let bad = run_ensemble(&wrong, &psi0, 500, 2).unwrap();
        let check = norm_average_check(&bad);
        assert!(check.any_flagged());
        // mean norm decays as e^{−t}
        assert!((check.deviation.last().unwrap() + 1.0 - (-1.0f64).exp()).abs() < 0.05);
    }

    #[test]
    fn bootstrap_is_seeded_and_zero_for_identical_trajectories() {
        let acc = ensemble(KernelPair::real_white(1), &StateVector::uniform(2), 100, 0.5);
        let a = bootstrap(&acc, Measure::Raw, 20, 4).unwrap();
        let b = bootstrap(&acc, Measure::Raw, 20, 4).unwrap();
        assert_eq!(a.replicates, b.replicates);
        assert_eq!(a.trace_distance_se(0), 0.0);
        assert!(a.trace_distance_se(1) > 0.0);
        // real noise on σ_z leaves |ρ01| deterministic up to integrator error
        let phys = bootstrap(&acc, Measure::Raw, 20, 4).unwrap();
        assert!(phys.std_error_of(1, |r| r.entry(0, 1).norm()) < 1e-6);
    }

    #[test]
    fn self_comparison_is_zero_and_grids_must_match() {
        let acc = ensemble(KernelPair::real_white(1), &StateVector::uniform(2), 10, 0.5);
        let est: Vec<DensityMatrix> = (0..acc.times().len()).map(|k| acc.raw_rho(k)).collect();
        let bands = vec![0.0; est.len()];
        let c = compare_to_reference(&est, acc.times(), &bands, &est, acc.times(), 0.0).unwrap();
        assert!(c.pass && c.max_distance == 0.0);
        let r = compare_to_reference(&est, acc.times(), &bands, &est[1..], &acc.times()[1..], 0.1);
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }
}
