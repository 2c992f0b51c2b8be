use nalgebra::{DMatrix, DVector};

use super::{
    apply_into, check_finite, combine_into, normalize, rk_step, DriftMode, OperatorSet, Scheme, Stage,
    TrajectoryRecord, Workspace,
};
use crate::error::{Error, Result};
use crate::hilbert::{max_abs, Operator, StateVector, C64, ONE};
use crate::noise::{KernelPair, NoiseKind, NoisePath, TimeGrid};

/// Tolerance for recognizing the kernel a drift mode was written for.
const KERNEL_MATCH_TOL: f64 = 1e-9;

/// Drift operator `O` for white noise with coefficients `α`, `β`.
pub fn white_drift(ops: &OperatorSet, alpha: &DMatrix<C64>, beta: &DMatrix<C64>, mode: DriftMode) -> Result<Operator> {
    let n = ops.n_channels();
    if alpha.shape() != (n, n) || beta.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, found: alpha.nrows() });
    }
    if max_abs(&(alpha - alpha.adjoint())) > KERNEL_MATCH_TOL || max_abs(&(beta - beta.transpose())) > KERNEL_MATCH_TOL {
        return Err(Error::InconsistentKernel("white drift needs Hermitian α and symmetric β".into()));
    }
    let l = ops.couplings();
    match mode {
        DriftMode::None => Ok(Operator::zeros(ops.dim())),
        DriftMode::GeneralFromKernel => {
            let mut o = DMatrix::zeros(ops.dim(), ops.dim());
            for i in 0..n {
                let ldag = l[i].matrix().adjoint();
                for j in 0..n {
                    let left = &ldag * alpha[(i, j)] + l[i].matrix() * beta[(i, j)];
                    o += left * l[j].matrix();
                }
            }
            Ok(Operator::from_raw(o * C64::new(-0.5, 0.0)))
        }
        DriftMode::LiteralRex { phi } => {
            if n != 1 || !ops.all_self_adjoint() {
                return Err(Error::ModeMismatch("literal_rex needs one self-adjoint coupling".into()));
            }
            let expected_beta = C64::from_polar(1.0, 2.0 * phi);
            if (alpha[(0, 0)] - ONE).norm() > KERNEL_MATCH_TOL || (beta[(0, 0)] - expected_beta).norm() > KERNEL_MATCH_TOL {
                return Err(Error::ModeMismatch(format!(
                    "literal_rex(phi={phi}) needs rotated-real white noise with α = 1, β = e^{{2iφ}}"
                )));
            }
            let l2 = l[0].mul(&l[0]);
            Ok(l2.scale(C64::new(-phi.cos().powi(2), 0.0)))
        }
    }
}

fn require_white(path: &NoisePath, ops: &OperatorSet) -> Result<()> {
    if path.kind != NoiseKind::White {
        return Err(Error::UnsupportedKernel("white-noise integrator needs a white noise path".into()));
    }
    ops.check_channels(path.n_channels())
}

/// Drives `n_steps` steps from `psi`, recording at the grid's checkpoints.
/// `f(k, stage, x, out)` evaluates the right-hand side during step `k`.
pub(crate) fn drive<F>(
    psi0: &StateVector,
    grid: &TimeGrid,
    scheme: Scheme,
    renormalize: bool,
    mut f: F,
) -> Result<TrajectoryRecord>
where
    F: FnMut(usize, Stage, &DVector<C64>, &mut DVector<C64>),
{
    let mut record = TrajectoryRecord::start(grid);
    let mut psi = psi0.amplitudes().clone();
    if renormalize {
        normalize(&mut psi);
    }
    let mut ws = Workspace::new(psi.len());
    let mut next = 0;
    let checkpoints = &grid.checkpoints;
    if checkpoints.first() == Some(&0) {
        record.push(&psi);
        next = 1;
    }
    for k in 0..grid.n_steps {
        rk_step(scheme, grid.dt, &mut psi, &mut ws, |stage, x, out| f(k, stage, x, out));
        if renormalize {
            normalize(&mut psi);
        }
        check_finite(&psi, k)?;
        if next < checkpoints.len() && checkpoints[next] == k + 1 {
            record.push(&psi);
            next += 1;
        }
    }
    Ok(record)
}

/// Integrates `dψ/dt = [−iH + Σ_j L_j z_j(t) + O] ψ` on a white path.
pub fn evolve_linear_white(
    psi0: &StateVector,
    ops: &OperatorSet,
    path: &NoisePath,
    drift: &Operator,
    scheme: Scheme,
) -> Result<TrajectoryRecord> {
    require_white(path, ops)?;
    ops.check_state(psi0)?;
    if drift.dim() != ops.dim() {
        return Err(Error::DimensionMismatch { expected: ops.dim(), found: drift.dim() });
    }
    let base = ops.minus_i_h() + drift.matrix();
    let l: Vec<&DMatrix<C64>> = ops.couplings().iter().map(Operator::matrix).collect();
    let mut g = base.clone();
    let mut current = usize::MAX;
    drive(psi0, &path.grid, scheme, false, |k, _, x, out| {
        if k != current {
            let terms: Vec<(C64, &DMatrix<C64>)> = l.iter().enumerate().map(|(j, m)| (path.values[(j, k)], *m)).collect();
            combine_into(&mut g, &base, &terms);
            current = k;
        }
        apply_into(&g, x, out);
    })
}

fn require_circular(kernel: &KernelPair, n: usize) -> Result<()> {
    let id = DMatrix::<C64>::identity(n, n);
    if kernel.kind() != NoiseKind::White
        || max_abs(&(kernel.a_delta() - id)) > KERNEL_MATCH_TOL
        || max_abs(kernel.b_delta()) > KERNEL_MATCH_TOL
    {
        return Err(Error::UnsupportedKernel("nonlinear equation needs circular white noise (α = I, β = 0)".into()));
    }
    Ok(())
}

fn expectation(x: &DVector<C64>, lx: &DVector<C64>, norm_sqr: f64) -> f64 {
    x.dotc(lx).re / norm_sqr
}

/// Norm-preserving equation for circular white noise,
/// `dφ/dt = [−iH + Σ_j (L_j − ⟨L_j⟩)(z_j + ⟨L_j⟩) − ½ Σ_j (L_j² − ⟨L_j²⟩)] φ`,
/// with expectations in the normalized state.
pub fn evolve_nonlinear_white(
    phi0: &StateVector,
    ops: &OperatorSet,
    path: &NoisePath,
    kernel: &KernelPair,
    scheme: Scheme,
) -> Result<TrajectoryRecord> {
    require_white(path, ops)?;
    ops.check_state(phi0)?;
    if (phi0.norm_sqr() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput("nonlinear equation needs a unit-norm initial state".into()));
    }
    if !ops.all_self_adjoint() {
        return Err(Error::InvalidInput("nonlinear equation needs self-adjoint couplings".into()));
    }
    kernel_channels(kernel, ops)?;
    require_circular(kernel, ops.n_channels())?;
    let minus_i_h = ops.minus_i_h();
    let l: Vec<DMatrix<C64>> = ops.couplings().iter().map(|o| o.matrix().clone()).collect();
    let dim = ops.dim();
    let (mut lx, mut llx) = (DVector::zeros(dim), DVector::zeros(dim));
    drive(phi0, &path.grid, scheme, true, |k, _, x, out| {
        apply_into(&minus_i_h, x, out);
        let nrm = x.norm_squared();
        for (j, lj) in l.iter().enumerate() {
            apply_into(lj, x, &mut lx);
            apply_into(lj, &lx, &mut llx);
            let e1 = expectation(x, &lx, nrm);
            let e2 = expectation(x, &llx, nrm);
            let c = path.values[(j, k)] + e1;
            // (L − ⟨L⟩)x·c − ½(L² − ⟨L²⟩)x
            out.axpy(c, &lx, ONE);
            out.axpy(-c * e1 + 0.5 * e2, x, ONE);
            out.axpy(C64::new(-0.5, 0.0), &llx, ONE);
        }
    })
}

fn kernel_channels(kernel: &KernelPair, ops: &OperatorSet) -> Result<()> {
    ops.check_channels(kernel.n_channels())
}

/// Linear equation with general drift under the measure `Q = P · ‖ψ‖²`: the
/// noise is shifted by `s_j = Σ_i ⟨L_i⟩(α_ij + β_ij)` and the state is
/// renormalized every step, so normalized trajectories carry Born weights
/// directly. Requires self-adjoint couplings.
pub fn evolve_guided_white(
    psi0: &StateVector,
    ops: &OperatorSet,
    path: &NoisePath,
    kernel: &KernelPair,
    scheme: Scheme,
) -> Result<TrajectoryRecord> {
    require_white(path, ops)?;
    ops.check_state(psi0)?;
    kernel_channels(kernel, ops)?;
    if kernel.kind() != NoiseKind::White {
        return Err(Error::UnsupportedKernel("guided sampling needs a white kernel".into()));
    }
    if !ops.all_self_adjoint() {
        return Err(Error::InvalidInput("guided sampling needs self-adjoint couplings".into()));
    }
    let n = ops.n_channels();
    let drift = white_drift(ops, kernel.a_delta(), kernel.b_delta(), DriftMode::GeneralFromKernel)?;
    let base = ops.minus_i_h() + drift.matrix();
    let shift = kernel.a_delta() + kernel.b_delta();
    let l: Vec<DMatrix<C64>> = ops.couplings().iter().map(|o| o.matrix().clone()).collect();
    let mut lx: Vec<DVector<C64>> = vec![DVector::zeros(ops.dim()); n];
    let mut expect = vec![0.0; n];
    drive(psi0, &path.grid, scheme, true, |k, _, x, out| {
        let nrm = x.norm_squared();
        for j in 0..n {
            apply_into(&l[j], x, &mut lx[j]);
            expect[j] = expectation(x, &lx[j], nrm);
        }
        apply_into(&base, x, out);
        for j in 0..n {
            let s: C64 = (0..n).map(|i| shift[(i, j)] * expect[i]).sum();
            out.axpy(path.values[(j, k)] + s, &lx[j], ONE);
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::I;
    use crate::noise::NoiseSampler;

    fn close(a: &Operator, b: &Operator, tol: f64) -> bool {
        a.add(&b.scale(C64::new(-1.0, 0.0))).max_abs() < tol
    }

    #[test]
    fn drift_table() {
        let ops = OperatorSet::qubit_sigma_z();
        let l2 = Operator::identity(2);
        let id = DMatrix::<C64>::identity(1, 1);
        let zero = DMatrix::<C64>::zeros(1, 1);
        let g = DriftMode::GeneralFromKernel;
        assert!(close(&white_drift(&ops, &id, &zero, g).unwrap(), &l2.scale(C64::new(-0.5, 0.0)), 1e-15));
        assert!(close(&white_drift(&ops, &id, &id, g).unwrap(), &l2.scale(C64::new(-1.0, 0.0)), 1e-15));
        assert!(close(&white_drift(&ops, &id, &(-&id), g).unwrap(), &Operator::zeros(2), 1e-15));
        let phi = 0.3;
        let beta = &id * C64::from_polar(1.0, 2.0 * phi);
        let expected = l2.scale(-C64::new(phi.cos().powi(2), 0.0) - I * (0.5 * (2.0 * phi).sin()));
        assert!(close(&white_drift(&ops, &id, &beta, g).unwrap(), &expected, 1e-15));
        let rex = white_drift(&ops, &id, &beta, DriftMode::LiteralRex { phi }).unwrap();
        assert!(close(&rex, &l2.scale(C64::new(-phi.cos().powi(2), 0.0)), 1e-15));
    }

    #[test]
    fn literal_rex_rejects_wrong_kernel_or_operators() {
        let ops = OperatorSet::qubit_sigma_z();
        let id = DMatrix::<C64>::identity(1, 1);
        let r = white_drift(&ops, &id, &DMatrix::zeros(1, 1), DriftMode::LiteralRex { phi: 0.4 });
        assert!(matches!(r, Err(Error::ModeMismatch(_))));
        let two = OperatorSet::two_qubit_zz();
        let id2 = DMatrix::<C64>::identity(2, 2);
        let r = white_drift(&two, &id2, &id2, DriftMode::LiteralRex { phi: 0.0 });
        assert!(matches!(r, Err(Error::ModeMismatch(_))));
    }

    #[test]
    fn deterministic_decay_closed_form() {
        let ops = OperatorSet::qubit_sigma_z();
        let grid = TimeGrid::uniform(0.0, 1e-2, 100, 10).unwrap();
        let path = NoisePath::zeros(&grid, 1, NoiseKind::White);
        let drift = Operator::identity(2).scale(C64::new(-0.5, 0.0));
        let psi0 = StateVector::uniform(2);
        let rec = evolve_linear_white(&psi0, &ops, &path, &drift, Scheme::Rk4).unwrap();
        assert_eq!(rec.states.len(), 11);
        for (t, s) in rec.times.iter().zip(&rec.states) {
            let expected = (-t / 2.0).exp() / 2f64.sqrt();
            for a in s.amplitudes().iter() {
                assert!((a.re - expected).abs() < 1e-10 && a.im.abs() < 1e-15);
            }
        }
        for (s, n) in rec.states.iter().zip(&rec.sq_norms) {
            assert_eq!(s.norm_sqr(), *n);
        }
    }

    #[test]
    fn imaginary_noise_preserves_norm() {
        let ops = OperatorSet::qubit_sigma_z();
        let k = KernelPair::imaginary_white(1);
        let grid = TimeGrid::uniform(0.0, 1e-3, 1000, 100).unwrap();
        let path = NoiseSampler::new(&k, &grid).unwrap().sample(1, 0);
        let drift = white_drift(&ops, k.a_delta(), k.b_delta(), DriftMode::GeneralFromKernel).unwrap();
        let rec = evolve_linear_white(&StateVector::uniform(2), &ops, &path, &drift, Scheme::Rk4).unwrap();
        for n in &rec.sq_norms {
            assert!((n - 1.0).abs() < 1e-5, "{n}");
        }
    }

    #[test]
    fn eigenstate_stays_on_its_ray() {
        let ops = OperatorSet::qubit_sigma_z();
        let k = KernelPair::real_white(1);
        let grid = TimeGrid::uniform(0.0, 1e-3, 500, 50).unwrap();
        let path = NoiseSampler::new(&k, &grid).unwrap().sample(2, 0);
        let drift = white_drift(&ops, k.a_delta(), k.b_delta(), DriftMode::GeneralFromKernel).unwrap();
        let psi0 = StateVector::basis(2, 1);
        let rec = evolve_linear_white(&psi0, &ops, &path, &drift, Scheme::Rk4).unwrap();
        for s in &rec.states {
            assert_eq!(s.amplitudes()[0], crate::hilbert::ZERO);
            assert!(s.normalized().overlap_sqr(&psi0) > 1.0 - 1e-14);
        }
    }

    #[test]
    fn nonlinear_fixed_point_and_symmetric_drift() {
        let ops = OperatorSet::qubit_sigma_z();
        let k = KernelPair::circular_white(1);
        let grid = TimeGrid::uniform(0.0, 1e-3, 500, 100).unwrap();
        let path = NoiseSampler::new(&k, &grid).unwrap().sample(4, 0);
        let up = StateVector::basis(2, 0);
        let rec = evolve_nonlinear_white(&up, &ops, &path, &k, Scheme::Rk4).unwrap();
        for s in &rec.states {
            assert!(s.overlap_sqr(&up) > 1.0 - 1e-14);
        }
        let quiet = NoisePath::zeros(&grid, 1, NoiseKind::White);
        let rec = evolve_nonlinear_white(&StateVector::uniform(2), &ops, &quiet, &k, Scheme::Rk4).unwrap();
        for s in &rec.states {
            assert!(s.expectation(&Operator::pauli_z()).re.abs() < 1e-14);
            assert!((s.norm_sqr() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn nonlinear_rejects_non_circular_noise() {
        let ops = OperatorSet::qubit_sigma_z();
        let grid = TimeGrid::uniform(0.0, 1e-2, 10, 1).unwrap();
        let path = NoisePath::zeros(&grid, 1, NoiseKind::White);
        let real = KernelPair::real_white(1);
        let r = evolve_nonlinear_white(&StateVector::uniform(2), &ops, &path, &real, Scheme::Rk4);
        assert!(matches!(r, Err(Error::UnsupportedKernel(_))));
        let unnormalized = StateVector::from_slice(&[ONE, ONE]).unwrap();
        let circ = KernelPair::circular_white(1);
        assert!(evolve_nonlinear_white(&unnormalized, &ops, &path, &circ, Scheme::Rk4).is_err());
    }

    #[test]
    fn guided_circular_matches_nonlinear_rays() {
        // For circular noise the shifted linear equation and the nonlinear
        // equation generate the same normalized trajectories.
        let ops = OperatorSet::qubit_sigma_z();
        let k = KernelPair::circular_white(1);
        let grid = TimeGrid::uniform(0.0, 1e-3, 1000, 250).unwrap();
        let path = NoiseSampler::new(&k, &grid).unwrap().sample(9, 3);
        let a = evolve_guided_white(&StateVector::uniform(2), &ops, &path, &k, Scheme::Rk4).unwrap();
        let b = evolve_nonlinear_white(&StateVector::uniform(2), &ops, &path, &k, Scheme::Rk4).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!(1.0 - x.overlap_sqr(y) < 1e-9);
        }
    }

    #[test]
    fn colored_path_is_rejected() {
        let ops = OperatorSet::qubit_sigma_z();
        let grid = TimeGrid::uniform(0.0, 1e-2, 10, 1).unwrap();
        let path = NoisePath::zeros(&grid, 1, NoiseKind::Smooth);
        let r = evolve_linear_white(&StateVector::uniform(2), &ops, &path, &Operator::zeros(2), Scheme::Rk4);
        assert!(matches!(r, Err(Error::UnsupportedKernel(_))));
    }

    #[test]
    fn blow_up_is_reported() {
        let ops = OperatorSet::qubit_sigma_z();
        let grid = TimeGrid::uniform(0.0, 1.0, 2000, 1).unwrap();
        let path = NoisePath::zeros(&grid, 1, NoiseKind::White);
        let drift = Operator::identity(2).scale(C64::new(10.0, 0.0));
        let r = evolve_linear_white(&StateVector::uniform(2), &ops, &path, &drift, Scheme::Heun);
        assert!(matches!(r, Err(Error::NonFiniteState { .. })));
    }
}
