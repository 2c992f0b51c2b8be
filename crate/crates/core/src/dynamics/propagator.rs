use super::colored::memory_coefficients_with_endpoint;
use super::{
    evolve_guided_white, evolve_linear_colored_commuting, evolve_linear_white, evolve_nonlinear_white, white_drift,
    DriftMode, MemoryDrift, OperatorSet, Scheme, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::hilbert::{Operator, StateVector};
use crate::noise::{KernelPair, NoiseKind, NoisePath, NoiseSampler, TimeGrid};

/// Which stochastic equation a trajectory follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Equation {
    /// Linear white-noise equation with a drift operator, sampled under `P`.
    LinearWhite,
    /// Norm-preserving nonlinear equation for circular white noise.
    NonlinearWhite,
    /// Linear white-noise equation with general drift, sampled under `Q`.
    GuidedWhite,
    /// Linear colored-noise equation with the commuting-closure memory drift.
    ColoredCommuting,
}

impl Equation {
    pub fn name(&self) -> &'static str {
        match self {
            Equation::LinearWhite => "linear_white",
            Equation::NonlinearWhite => "nonlinear_white",
            Equation::GuidedWhite => "guided_white",
            Equation::ColoredCommuting => "colored_commuting",
        }
    }

    /// Whether trajectories are kept at unit norm.
    pub fn is_normalized(&self) -> bool {
        matches!(self, Equation::NonlinearWhite | Equation::GuidedWhite)
    }
}

#[derive(Debug, Clone)]
enum Prepared {
    Constant(Operator),
    Memory(MemoryDrift),
    Internal,
}

/// Everything needed to integrate trajectories of one equation on one grid:
/// the noise factorization and the drift are built once and shared.
#[derive(Debug, Clone)]
pub struct Propagator {
    equation: Equation,
    ops: OperatorSet,
    sampler: NoiseSampler,
    drift: Prepared,
    drift_mode: DriftMode,
    scheme: Scheme,
    endpoint: f64,
}

impl Propagator {
    pub fn new(
        equation: Equation,
        ops: &OperatorSet,
        kernel: &KernelPair,
        drift_mode: DriftMode,
        grid: &TimeGrid,
        scheme: Scheme,
    ) -> Result<Self> {
        Self::build(equation, ops, kernel, drift_mode, grid, scheme, 0.5, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        equation: Equation,
        ops: &OperatorSet,
        kernel: &KernelPair,
        drift_mode: DriftMode,
        grid: &TimeGrid,
        scheme: Scheme,
        endpoint: f64,
        explicit: Option<Operator>,
    ) -> Result<Self> {
        ops.check_channels(kernel.n_channels())?;
        let white = kernel.kind() == NoiseKind::White;
        let drift = match equation {
            Equation::LinearWhite => {
                if !white {
                    return Err(Error::UnsupportedKernel("linear_white needs a white kernel".into()));
                }
                match explicit {
                    Some(o) => Prepared::Constant(o),
                    None => Prepared::Constant(white_drift(ops, kernel.a_delta(), kernel.b_delta(), drift_mode)?),
                }
            }
            Equation::NonlinearWhite | Equation::GuidedWhite => {
                if drift_mode != DriftMode::GeneralFromKernel {
                    return Err(Error::ModeMismatch(format!("{} always uses the general drift", equation.name())));
                }
                Prepared::Internal
            }
            Equation::ColoredCommuting => {
                if drift_mode != DriftMode::GeneralFromKernel {
                    return Err(Error::ModeMismatch("colored_commuting uses the memory drift of the kernel".into()));
                }
                if !ops.is_commuting() {
                    return Err(Error::NonCommuting);
                }
                if kernel.kind() == NoiseKind::Mixed {
                    return Err(Error::UnsupportedKernel(
                        "kernels with both smooth and delta parts are not supported by the colored integrator".into(),
                    ));
                }
                Prepared::Memory(MemoryDrift::new(ops, &memory_coefficients_with_endpoint(kernel, grid, endpoint))?)
            }
        };
        let sampler = NoiseSampler::new(kernel, grid)?;
        Ok(Self { equation, ops: ops.clone(), sampler, drift, drift_mode, scheme, endpoint })
    }

    /// Replaces the drift of a `LinearWhite` propagator, e.g. with a
    /// deliberately wrong operator for a negative control.
    pub fn with_drift(mut self, drift: Operator) -> Result<Self> {
        if self.equation != Equation::LinearWhite {
            return Err(Error::ModeMismatch("an explicit drift applies to linear_white only".into()));
        }
        if drift.dim() != self.ops.dim() {
            return Err(Error::DimensionMismatch { expected: self.ops.dim(), found: drift.dim() });
        }
        self.drift = Prepared::Constant(drift);
        Ok(self)
    }

    /// Colored propagator with a wrong delta endpoint weight; negative controls only.
    pub(crate) fn with_endpoint(self, endpoint: f64) -> Result<Self> {
        Self::build(self.equation, &self.ops, self.kernel(), self.drift_mode, self.grid(), self.scheme, endpoint, None)
    }

    pub fn equation(&self) -> Equation {
        self.equation
    }

    pub fn ops(&self) -> &OperatorSet {
        &self.ops
    }

    pub fn kernel(&self) -> &KernelPair {
        self.sampler.kernel()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.sampler.grid()
    }

    pub fn sampler(&self) -> &NoiseSampler {
        &self.sampler
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn drift_mode(&self) -> DriftMode {
        self.drift_mode
    }

    /// The constant drift operator, for the white linear equation.
    pub fn drift_operator(&self) -> Option<&Operator> {
        match &self.drift {
            Prepared::Constant(o) => Some(o),
            _ => None,
        }
    }

    pub fn propagate(&self, psi0: &StateVector, path: &NoisePath) -> Result<TrajectoryRecord> {
        match (&self.drift, self.equation) {
            (Prepared::Constant(o), _) => evolve_linear_white(psi0, &self.ops, path, o, self.scheme),
            (Prepared::Memory(m), _) => evolve_linear_colored_commuting(psi0, &self.ops, path, m, self.scheme),
            (Prepared::Internal, Equation::NonlinearWhite) => {
                evolve_nonlinear_white(psi0, &self.ops, path, self.kernel(), self.scheme)
            }
            (Prepared::Internal, _) => evolve_guided_white(psi0, &self.ops, path, self.kernel(), self.scheme),
        }
    }

    /// Trajectory `index` of stream `seed`; errors carry the index.
    pub fn run(&self, psi0: &StateVector, seed: u64, index: u64) -> Result<TrajectoryRecord> {
        let path = self.sampler.sample(seed, index);
        let mut rec = self
            .propagate(psi0, &path)
            .map_err(|e| Error::Trajectory { index, source: Box::new(e) })?;
        rec.trajectory_index = index;
        Ok(rec)
    }

    /// Same equation on a different grid.
    fn regridded(&self, grid: &TimeGrid) -> Result<Self> {
        let explicit = match (&self.drift, self.equation) {
            (Prepared::Constant(o), Equation::LinearWhite) => Some(o.clone()),
            _ => None,
        };
        Self::build(self.equation, &self.ops, self.kernel(), self.drift_mode, grid, self.scheme, self.endpoint, explicit)
    }

    /// Final-time self-convergence between steps `dt`, `dt/2`, `dt/4` on
    /// shared noise: white paths are refined by Brownian bridges, smooth
    /// paths are drawn on the finest grid and subsampled.
    pub fn self_convergence(&self, psi0: &StateVector, n_paths: usize, seed: u64) -> Result<ConvergenceReport> {
        if n_paths == 0 {
            return Err(Error::InvalidInput("convergence needs at least one path".into()));
        }
        let g0 = self.grid().clone();
        let g1 = g0.halved();
        let g2 = g1.halved();
        let p1 = self.regridded(&g1)?;
        let p2 = self.regridded(&g2)?;
        let ray = self.equation.is_normalized();
        let (mut s01, mut s12) = (0.0, 0.0);
        for r in 0..n_paths as u64 {
            let (c0, c1, c2) = match self.kernel().kind() {
                NoiseKind::White => {
                    let c0 = self.sampler.sample(seed, r);
                    let (s1, c1) = self.sampler.refine(&c0, seed.wrapping_add(1), r)?;
                    let (_, c2) = s1.refine(&c1, seed.wrapping_add(2), r)?;
                    (c0, c1, c2)
                }
                _ => {
                    let c2 = p2.sampler.sample(seed, r);
                    (c2.subsampled(4)?, c2.subsampled(2)?, c2)
                }
            };
            let f0 = self.propagate(psi0, &c0)?;
            let f1 = p1.propagate(psi0, &c1)?;
            let f2 = p2.propagate(psi0, &c2)?;
            s01 += state_distance(f0.final_state(), f1.final_state(), ray).powi(2);
            s12 += state_distance(f1.final_state(), f2.final_state(), ray).powi(2);
        }
        let n = n_paths as f64;
        let errors = [(s01 / n).sqrt(), (s12 / n).sqrt()];
        Ok(ConvergenceReport { dt: g0.dt, n_paths, errors, order: (errors[0] / errors[1]).log2() })
    }
}

/// Root-mean-square final-time differences `‖ψ_dt − ψ_{dt/2}‖` and
/// `‖ψ_{dt/2} − ψ_{dt/4}‖` and the observed order `log2(e1/e2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub dt: f64,
    pub n_paths: usize,
    pub errors: [f64; 2],
    pub order: f64,
}

/// Relative distance `‖a − b‖/‖b‖`, or with `ray` the distance between the
/// rays, `sqrt(1 − |⟨a|b⟩|²/(‖a‖²‖b‖²))`.
pub fn state_distance(a: &StateVector, b: &StateVector, ray: bool) -> f64 {
    if ray {
        (1.0 - a.normalized().overlap_sqr(&b.normalized())).max(0.0).sqrt()
    } else {
        (a.amplitudes() - b.amplitudes()).norm() / b.amplitudes().norm()
    }
}
