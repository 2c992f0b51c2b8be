//! Trajectory integrators for linear and nonlinear stochastic Schrödinger
//! equations, plus the deterministic reference solutions they are checked
//! against.

mod colored;
mod propagator;
mod reference;
mod white;

use nalgebra::{DMatrix, DVector};

pub use colored::{evolve_linear_colored_commuting, memory_coefficients, MemoryCoefficients, MemoryDrift};
pub use propagator::{state_distance, ConvergenceReport, Equation, Propagator};
pub use reference::{analytic_commuting_rho, lindblad_evolve, lindblad_evolve_with_rates};
pub use white::{evolve_guided_white, evolve_linear_white, evolve_nonlinear_white, white_drift};

use crate::error::{Error, Result};
use crate::hilbert::{commuting_family, is_hermitian, Operator, StateVector, C64, I, ZERO};
use crate::noise::TimeGrid;

/// Absolute tolerance, scaled by the largest operator entry, for the
/// self-adjointness and commutation flags.
pub const FLAG_RTOL: f64 = 1e-10;

/// Hamiltonian and coupling operators of one open system.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    hamiltonian: Operator,
    couplings: Vec<Operator>,
    self_adjoint: Vec<bool>,
    commuting: bool,
}

impl OperatorSet {
    pub fn new(hamiltonian: Operator, couplings: Vec<Operator>) -> Result<Self> {
        let dim = hamiltonian.dim();
        if couplings.is_empty() {
            return Err(Error::InvalidInput("at least one coupling operator is required".into()));
        }
        for l in &couplings {
            if l.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: l.dim() });
            }
        }
        let scale = couplings.iter().map(Operator::max_abs).fold(hamiltonian.max_abs(), f64::max).max(1.0);
        let tol = FLAG_RTOL * scale;
        if !is_hermitian(&hamiltonian, tol) {
            return Err(Error::InvalidInput("Hamiltonian must be Hermitian".into()));
        }
        let self_adjoint = couplings.iter().map(|l| is_hermitian(l, tol)).collect();
        let mut family = vec![hamiltonian.clone()];
        for l in &couplings {
            family.push(l.clone());
            family.push(l.dagger());
        }
        let commuting = commuting_family(&family, tol * scale);
        Ok(Self { hamiltonian, couplings, self_adjoint, commuting })
    }

    /// `H = 0`, `L = σ_z`.
    pub fn qubit_sigma_z() -> Self {
        Self::new(Operator::zeros(2), vec![Operator::pauli_z()]).unwrap()
    }

    /// `H = 0`, `L = σ_x`.
    pub fn qubit_sigma_x() -> Self {
        Self::new(Operator::zeros(2), vec![Operator::pauli_x()]).unwrap()
    }

    /// `H = 0`, `L = {σ_z ⊗ I, I ⊗ σ_z}`.
    pub fn two_qubit_zz() -> Self {
        let (z, id) = (Operator::pauli_z(), Operator::identity(2));
        Self::new(Operator::zeros(4), vec![z.kron(&id), id.kron(&z)]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn n_channels(&self) -> usize {
        self.couplings.len()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn couplings(&self) -> &[Operator] {
        &self.couplings
    }

    pub fn self_adjoint(&self) -> &[bool] {
        &self.self_adjoint
    }

    pub fn all_self_adjoint(&self) -> bool {
        self.self_adjoint.iter().all(|&s| s)
    }

    /// Whether `{H, L_i, L_i†}` pairwise commute.
    pub fn is_commuting(&self) -> bool {
        self.commuting
    }

    /// Same couplings with a different Hamiltonian.
    pub fn with_hamiltonian(&self, hamiltonian: Operator) -> Result<Self> {
        Self::new(hamiltonian, self.couplings.clone())
    }

    /// `Σ_i L_i†L_i`.
    pub fn sum_ldag_l(&self) -> Operator {
        let mut acc = Operator::zeros(self.dim());
        for l in &self.couplings {
            acc = acc.add(&l.dagger().mul(l));
        }
        acc
    }

    pub(crate) fn check_channels(&self, n: usize) -> Result<()> {
        if n != self.n_channels() {
            return Err(Error::DimensionMismatch { expected: self.n_channels(), found: n });
        }
        Ok(())
    }

    pub(crate) fn check_state(&self, psi: &StateVector) -> Result<()> {
        if psi.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: psi.dim() });
        }
        Ok(())
    }

    /// `−iH` as a raw matrix.
    pub(crate) fn minus_i_h(&self) -> DMatrix<C64> {
        self.hamiltonian.matrix() * (-I)
    }
}

/// Which deterministic drift operator `O` accompanies a linear white equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftMode {
    /// `O = −½ Σ_ij (L_i†α_ij + L_iβ_ij) L_j`, which conserves the mean squared norm.
    GeneralFromKernel,
    /// `O = −cos²φ L²` for rotated-real noise `e^{iφ}x`.
    LiteralRex { phi: f64 },
    /// `O = 0`.
    None,
}

impl DriftMode {
    pub fn name(&self) -> String {
        match self {
            DriftMode::GeneralFromKernel => "general_from_kernel".into(),
            DriftMode::LiteralRex { phi } => format!("literal_rex(phi={phi})"),
            DriftMode::None => "none".into(),
        }
    }
}

/// Time-stepping scheme. Both evaluate the noise as frozen over a step
/// (piecewise constant for white noise, piecewise linear for smooth noise),
/// so both converge to the Stratonovich solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Heun predictor-corrector. Its per-step norm error on unitary steps is
    /// fourth order in the step phase, so accumulated norm drift is `O(dt)`.
    Heun,
    /// Classical fourth-order Runge-Kutta on the frozen-noise ODE; norm drift
    /// on unitary steps is `O(dt²)` accumulated.
    #[default]
    Rk4,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heun" => Ok(Self::Heun),
            "rk4" => Ok(Self::Rk4),
            other => Err(Error::InvalidInput(format!("unknown scheme '{other}' (expected heun or rk4)"))),
        }
    }
}

/// States of one trajectory at the grid's checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub trajectory_index: u64,
    pub checkpoints: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub sq_norms: Vec<f64>,
}

impl TrajectoryRecord {
    fn start(grid: &TimeGrid) -> Self {
        let n = grid.checkpoints.len();
        Self {
            trajectory_index: 0,
            checkpoints: grid.checkpoints.clone(),
            times: grid.checkpoint_times(),
            states: Vec::with_capacity(n),
            sq_norms: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, psi: &DVector<C64>) {
        let state = StateVector::from_raw(psi.clone());
        self.sq_norms.push(state.norm_sqr());
        self.states.push(state);
    }

    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("record has at least one checkpoint")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    Start,
    Mid,
    End,
}

/// Scratch vectors for one step.
pub(crate) struct Workspace {
    k: [DVector<C64>; 4],
    tmp: DVector<C64>,
}

impl Workspace {
    pub(crate) fn new(dim: usize) -> Self {
        let z = || DVector::zeros(dim);
        Self { k: [z(), z(), z(), z()], tmp: z() }
    }
}

/// One step of `ψ' = f(t, ψ)`; `f(stage, x, out)` writes the right-hand side
/// at the start, midpoint or end of the step.
pub(crate) fn rk_step<F>(scheme: Scheme, h: f64, psi: &mut DVector<C64>, ws: &mut Workspace, mut f: F)
where
    F: FnMut(Stage, &DVector<C64>, &mut DVector<C64>),
{
    let [k1, k2, k3, k4] = &mut ws.k;
    let tmp = &mut ws.tmp;
    let h = C64::new(h, 0.0);
    match scheme {
        Scheme::Heun => {
            f(Stage::Start, psi, k1);
            tmp.copy_from(psi);
            tmp.axpy(h, k1, C64::new(1.0, 0.0));
            f(Stage::End, tmp, k2);
            psi.axpy(h * 0.5, k1, C64::new(1.0, 0.0));
            psi.axpy(h * 0.5, k2, C64::new(1.0, 0.0));
        }
        Scheme::Rk4 => {
            let one = C64::new(1.0, 0.0);
            f(Stage::Start, psi, k1);
            tmp.copy_from(psi);
            tmp.axpy(h * 0.5, k1, one);
            f(Stage::Mid, tmp, k2);
            tmp.copy_from(psi);
            tmp.axpy(h * 0.5, k2, one);
            f(Stage::Mid, tmp, k3);
            tmp.copy_from(psi);
            tmp.axpy(h, k3, one);
            f(Stage::End, tmp, k4);
            let sixth = h / 6.0;
            psi.axpy(sixth, k1, one);
            psi.axpy(sixth * 2.0, k2, one);
            psi.axpy(sixth * 2.0, k3, one);
            psi.axpy(sixth, k4, one);
        }
    }
}

/// `out = g x` without allocating.
pub(crate) fn apply_into(g: &DMatrix<C64>, x: &DVector<C64>, out: &mut DVector<C64>) {
    out.gemv(C64::new(1.0, 0.0), g, x, ZERO);
}

/// `dst = src + Σ_j c_j m_j`, entrywise.
pub(crate) fn combine_into(dst: &mut DMatrix<C64>, src: &DMatrix<C64>, terms: &[(C64, &DMatrix<C64>)]) {
    dst.copy_from(src);
    for (c, m) in terms {
        for (d, v) in dst.iter_mut().zip(m.iter()) {
            *d += c * v;
        }
    }
}

pub(crate) fn check_finite(psi: &DVector<C64>, step: usize) -> Result<()> {
    if psi.iter().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { step })
    }
}

pub(crate) fn normalize(psi: &mut DVector<C64>) {
    let n = psi.norm();
    if n > 0.0 {
        psi.unscale_mut(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_are_computed() {
        let ops = OperatorSet::qubit_sigma_z();
        assert!(ops.all_self_adjoint() && ops.is_commuting());
        let ops = OperatorSet::new(Operator::pauli_x(), vec![Operator::pauli_z()]).unwrap();
        assert!(!ops.is_commuting());
        let lower = Operator::from_rows(&[&[ZERO, C64::new(1.0, 0.0)], &[ZERO, ZERO]]).unwrap();
        let ops = OperatorSet::new(Operator::zeros(2), vec![lower]).unwrap();
        assert!(!ops.all_self_adjoint());
        // σ⁻ does not commute with σ⁺
        assert!(!ops.is_commuting());
        assert!(OperatorSet::two_qubit_zz().is_commuting());
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let r = OperatorSet::new(Operator::zeros(2), vec![Operator::zeros(3)]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
        assert!(OperatorSet::new(Operator::zeros(2), vec![]).is_err());
        let non_hermitian = Operator::from_rows(&[&[ZERO, I], &[I, ZERO]]).unwrap();
        assert!(OperatorSet::new(non_hermitian, vec![Operator::pauli_z()]).is_err());
    }

    #[test]
    fn rk4_step_matches_exponential() {
        // ψ' = λψ for one step: RK4 reproduces the degree-4 Taylor polynomial.
        let lambda = C64::new(-0.3, 0.7);
        let mut psi = DVector::from_element(1, C64::new(1.0, 0.0));
        let mut ws = Workspace::new(1);
        let h = 0.1;
        rk_step(Scheme::Rk4, h, &mut psi, &mut ws, |_, x, out| out[0] = lambda * x[0]);
        let x = lambda * h;
        let taylor = C64::new(1.0, 0.0) + x + x * x / 2.0 + x * x * x / 6.0 + x * x * x * x / 24.0;
        assert!((psi[0] - taylor).norm() < 1e-15);

        let mut psi = DVector::from_element(1, C64::new(1.0, 0.0));
        rk_step(Scheme::Heun, h, &mut psi, &mut ws, |_, x, out| out[0] = lambda * x[0]);
        assert!((psi[0] - (C64::new(1.0, 0.0) + x + x * x / 2.0)).norm() < 1e-15);
    }
}
