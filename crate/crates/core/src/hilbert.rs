//! Dense complex linear algebra over a finite-dimensional state space.
//!
//! States, operators and density matrices are thin newtypes over `nalgebra`
//! dynamic matrices. Target dimensions are small (at most a few dozen), so
//! everything is dense.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Relative tolerance used to cluster degenerate eigenvalues into one manifold.
pub const DEGENERACY_RTOL: f64 = 1e-9;

/// A (not necessarily normalized) vector of probability amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(DVector<C64>);

impl StateVector {
    pub fn new(amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::InvalidInput("state vector must have dim >= 1".into()));
        }
        if amplitudes.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidInput("state vector has non-finite amplitudes".into()));
        }
        Ok(Self(amplitudes))
    }

    pub fn from_slice(amplitudes: &[C64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(amplitudes))
    }

    /// Computational basis vector `|k⟩`.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = DVector::zeros(dim);
        v[k] = ONE;
        Self(v)
    }

    /// Uniform superposition of every basis vector, unit norm.
    pub fn uniform(dim: usize) -> Self {
        let a = 1.0 / (dim as f64).sqrt();
        Self(DVector::from_element(dim, C64::new(a, 0.0)))
    }

    pub(crate) fn from_raw(v: DVector<C64>) -> Self {
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<C64> {
        self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self(self.0.map(|z| z / n))
    }

    /// `⟨ψ|A|ψ⟩ / ⟨ψ|ψ⟩`.
    pub fn expectation(&self, op: &Operator) -> C64 {
        let a_psi = &op.0 * &self.0;
        self.0.dotc(&a_psi) / self.norm_sqr()
    }

    /// `|⟨ψ|φ⟩|²` for the normalized rays; 1 when both are the same physical state.
    pub fn overlap_sqr(&self, other: &StateVector) -> f64 {
        self.0.dotc(&other.0).norm_sqr() / (self.norm_sqr() * other.norm_sqr())
    }
}

/// Square complex matrix acting on the state space. With ħ = 1 the
/// Hamiltonian carries units of 1/time.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator(DMatrix<C64>);

impl Operator {
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::InvalidInput(format!(
                "operator must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.nrows() == 0 {
            return Err(Error::InvalidInput("operator must have dim >= 1".into()));
        }
        if entries.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidInput("operator has non-finite entries".into()));
        }
        Ok(Self(entries))
    }

    /// Row-major construction, mostly for tests and presets.
    pub fn from_rows(rows: &[&[C64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("operator rows must all have length dim".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub(crate) fn from_raw(m: DMatrix<C64>) -> Self {
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                C64::new(values[i], 0.0)
            } else {
                ZERO
            }
        }))
    }

    pub fn pauli_x() -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]))
    }

    pub fn pauli_y() -> Self {
        Self(DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]))
    }

    pub fn pauli_z() -> Self {
        Self::diagonal(&[1.0, -1.0])
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.0
    }

    pub fn dagger(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, c: C64) -> Self {
        Self(&self.0 * c)
    }

    pub fn add(&self, other: &Operator) -> Self {
        Self(&self.0 + &other.0)
    }

    pub fn mul(&self, other: &Operator) -> Self {
        Self(&self.0 * &other.0)
    }

    pub fn kron(&self, other: &Operator) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    pub fn commutator(&self, other: &Operator) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.0)
    }

    pub fn apply(&self, psi: &StateVector) -> StateVector {
        StateVector(&self.0 * &psi.0)
    }
}

/// Statistical operator. Ensemble estimates built from unnormalized
/// trajectories need not have unit trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(DMatrix<C64>);

impl DensityMatrix {
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        Operator::new(entries).map(|op| Self(op.0))
    }

    pub(crate) fn from_raw(m: DMatrix<C64>) -> Self {
        Self(m)
    }

    pub fn pure(psi: &StateVector) -> Self {
        outer_product(psi)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.0
    }

    pub fn entry(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.0 * &self.0).trace().re
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs(&(&self.0 - self.0.adjoint())) <= tol
    }

    /// Replaces the matrix with its Hermitian part `(ρ + ρ†)/2`.
    pub fn symmetrize(&mut self) {
        self.0 = hermitian_part(&self.0);
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_part(&self.0)
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `Tr(ρA)`.
    pub fn expectation(&self, op: &Operator) -> C64 {
        (&self.0 * &op.0).trace()
    }
}

/// Simultaneous eigenspaces of a commuting Hermitian family.
///
/// Manifolds are ordered lexicographically by descending eigenvalue tuple,
/// so for `σ_z` manifold 0 is the `+1` eigenspace.
#[derive(Debug, Clone)]
pub struct EigenStructure {
    /// `eigenvalues[k][i]` is the eigenvalue of operator `i` on manifold `k`.
    pub eigenvalues: Vec<Vec<f64>>,
    /// Orthogonal projectors `P_k`.
    pub projectors: Vec<Operator>,
    /// Orthonormal bases of the manifolds, one column per basis vector.
    pub bases: Vec<DMatrix<C64>>,
}

impl EigenStructure {
    pub fn len(&self) -> usize {
        self.projectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projectors.is_empty()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.bases.iter().map(|b| b.ncols()).collect()
    }

    /// `‖P_k ψ‖² / ‖ψ‖²` for each manifold.
    pub fn weights(&self, psi: &StateVector) -> Vec<f64> {
        let n = psi.norm_sqr();
        self.bases
            .iter()
            .map(|b| (b.adjoint() * psi.amplitudes()).norm_squared() / n)
            .collect()
    }

    /// Index of the manifold carrying the largest weight, lowest index on ties.
    pub fn dominant_manifold(&self, psi: &StateVector) -> usize {
        let w = self.weights(psi);
        let mut best = 0;
        for (k, &wk) in w.iter().enumerate() {
            if wk > w[best] {
                best = k;
            }
        }
        best
    }
}

pub(crate) fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn is_hermitian(m: &Operator, tol: f64) -> bool {
    max_abs(&(&m.0 - m.0.adjoint())) <= tol
}

pub fn commuting_family(ops: &[Operator], tol: f64) -> bool {
    for (a, op_a) in ops.iter().enumerate() {
        for op_b in &ops[a + 1..] {
            if op_a.dim() != op_b.dim() || op_a.commutator(op_b).max_abs() > tol {
                return false;
            }
        }
    }
    true
}

pub fn joint_eigenmanifolds(ops: &[Operator], tol: f64) -> Result<EigenStructure> {
    let dim = match ops.first() {
        Some(op) => op.dim(),
        None => return Err(Error::InvalidInput("empty operator family".into())),
    };
    for op in ops {
        if op.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: op.dim() });
        }
        if !is_hermitian(op, tol) {
            return Err(Error::InvalidInput("joint eigenmanifolds need Hermitian operators".into()));
        }
    }
    if !commuting_family(ops, tol) {
        return Err(Error::NonCommuting);
    }

    // Refine the decomposition one operator at a time: within each current
    // manifold, diagonalize the compressed operator and split its spectrum.
    let mut bases = vec![DMatrix::<C64>::identity(dim, dim)];
    for op in ops {
        let scale = op.max_abs();
        let mut refined = Vec::with_capacity(bases.len());
        for basis in bases {
            let compressed = hermitian_part(&(basis.adjoint() * op.matrix() * &basis));
            let eig = compressed.symmetric_eigen();
            let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

            let mut start = 0;
            while start < order.len() {
                let mut end = start + 1;
                while end < order.len()
                    && eig.eigenvalues[order[end - 1]] - eig.eigenvalues[order[end]]
                        <= DEGENERACY_RTOL * scale
                {
                    end += 1;
                }
                let cols: Vec<_> = order[start..end]
                    .iter()
                    .map(|&c| eig.eigenvectors.column(c).into_owned())
                    .collect();
                let sub = DMatrix::from_columns(&cols);
                refined.push(&basis * sub);
                start = end;
            }
        }
        bases = refined;
    }

    let projectors: Vec<Operator> =
        bases.iter().map(|b| Operator(b * b.adjoint())).collect();
    let eigenvalues = bases
        .iter()
        .map(|b| {
            let rank = b.ncols() as f64;
            ops.iter()
                .map(|op| (b.adjoint() * op.matrix() * b).trace().re / rank)
                .collect()
        })
        .collect();

    let mut total = DMatrix::<C64>::zeros(dim, dim);
    for p in &projectors {
        total += p.matrix();
    }
    total -= DMatrix::<C64>::identity(dim, dim);
    if max_abs(&total) > tol.max(1e-12) {
        return Err(Error::InvalidInput("eigenmanifold projectors are not complete".into()));
    }

    Ok(EigenStructure { eigenvalues, projectors, bases })
}

/// `½ Σ |λ|` over the eigenvalues of `ρ1 − ρ2`.
pub fn trace_distance(rho1: &DensityMatrix, rho2: &DensityMatrix) -> Result<f64> {
    if rho1.dim() != rho2.dim() {
        return Err(Error::DimensionMismatch { expected: rho1.dim(), found: rho2.dim() });
    }
    let diff = hermitian_part(&(&rho1.0 - &rho2.0));
    Ok(0.5 * diff.symmetric_eigenvalues().iter().map(|l| l.abs()).sum::<f64>())
}

/// `|ψ⟩⟨ψ|`, filled so the result is exactly Hermitian.
pub fn outer_product(psi: &StateVector) -> DensityMatrix {
    let v = &psi.0;
    let n = v.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(v[i].norm_sqr(), 0.0);
        for j in i + 1..n {
            let e = v[i] * v[j].conj();
            m[(i, j)] = e;
            m[(j, i)] = e.conj();
        }
    }
    DensityMatrix(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn hermiticity_checks() {
        assert!(is_hermitian(&Operator::pauli_z(), 1e-12));
        assert!(!is_hermitian(&Operator::pauli_z().scale(I), 1e-12));
        let raise = Operator::from_rows(&[&[ZERO, ONE], &[ZERO, ZERO]]).unwrap();
        assert!(!is_hermitian(&raise, 1e-12));
    }

    #[test]
    fn commuting_checks() {
        assert!(commuting_family(&[Operator::pauli_z()], 1e-12));
        assert!(!commuting_family(&[Operator::pauli_z(), Operator::pauli_x()], 1e-12));
        assert!(commuting_family(
            &[Operator::diagonal(&[1.0, -1.0]), Operator::diagonal(&[3.0, 7.0])],
            1e-12
        ));
        // [σ_z, σ_x] = 2iσ_y
        let comm = Operator::pauli_z().commutator(&Operator::pauli_x());
        assert!((comm.matrix() - Operator::pauli_y().scale(2.0 * I).matrix()).norm() < 1e-14);
    }

    #[test]
    fn eigenmanifolds_of_sigma_z() {
        let eig = joint_eigenmanifolds(&[Operator::pauli_z()], 1e-12).unwrap();
        assert_eq!(eig.len(), 2);
        assert_eq!(eig.ranks(), vec![1, 1]);
        assert!((eig.eigenvalues[0][0] - 1.0).abs() < 1e-12);
        assert!((eig.eigenvalues[1][0] + 1.0).abs() < 1e-12);
        let up = StateVector::basis(2, 0);
        assert_eq!(eig.dominant_manifold(&up), 0);
    }

    #[test]
    fn eigenmanifolds_identity_and_degenerate() {
        let eig = joint_eigenmanifolds(&[Operator::identity(3)], 1e-12).unwrap();
        assert_eq!(eig.len(), 1);
        assert!((eig.projectors[0].matrix() - DMatrix::<C64>::identity(3, 3)).norm() < 1e-12);
        assert!((eig.eigenvalues[0][0] - 1.0).abs() < 1e-12);

        let eig = joint_eigenmanifolds(&[Operator::diagonal(&[1.0, 1.0, -1.0])], 1e-12).unwrap();
        assert_eq!(eig.ranks(), vec![2, 1]);
    }

    #[test]
    fn eigenmanifolds_refuse_noncommuting() {
        let err = joint_eigenmanifolds(&[Operator::pauli_z(), Operator::pauli_x()], 1e-12);
        assert_eq!(err.unwrap_err(), Error::NonCommuting);
    }

    #[test]
    fn eigenmanifolds_of_two_qubit_family() {
        let z1 = Operator::pauli_z().kron(&Operator::identity(2));
        let z2 = Operator::identity(2).kron(&Operator::pauli_z());
        let zz = z1.mul(&z2);
        // ZZ alone splits into two rank-2 manifolds; adding Z1 splits them further.
        assert_eq!(joint_eigenmanifolds(std::slice::from_ref(&zz), 1e-12).unwrap().ranks(), vec![2, 2]);
        let eig = joint_eigenmanifolds(&[zz, z1], 1e-12).unwrap();
        assert_eq!(eig.ranks(), vec![1, 1, 1, 1]);
        assert_eq!(eig.eigenvalues[0].len(), 2);
    }

    #[test]
    fn trace_distance_examples() {
        let up = DensityMatrix::pure(&StateVector::basis(2, 0));
        let down = DensityMatrix::pure(&StateVector::basis(2, 1));
        let mixed = DensityMatrix::maximally_mixed(2);
        assert_eq!(trace_distance(&up, &up).unwrap(), 0.0);
        assert!((trace_distance(&up, &down).unwrap() - 1.0).abs() < 1e-14);
        // |0⟩⟨0| − I/2 = diag(½, −½)
        assert!((trace_distance(&up, &mixed).unwrap() - 0.5).abs() < 1e-14);
        assert!(matches!(
            trace_distance(&up, &DensityMatrix::maximally_mixed(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn outer_product_examples() {
        let rho = outer_product(&StateVector::basis(2, 0));
        assert_eq!(rho.matrix(), &DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]));

        let plus = StateVector::uniform(2);
        let rho = outer_product(&plus);
        for z in rho.matrix().iter() {
            assert!((z - c(0.5)).norm() < 1e-15);
        }

        let rho = outer_product(&StateVector::from_slice(&[c(2.0), ZERO]).unwrap());
        assert_eq!(rho.entry(0, 0), c(4.0));
        assert_eq!(rho.trace(), c(4.0));
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(StateVector::from_slice(&[]).is_err());
        assert!(StateVector::from_slice(&[C64::new(f64::NAN, 0.0)]).is_err());
        assert!(Operator::new(DMatrix::zeros(2, 3)).is_err());
    }
}
