use nalgebra::DMatrix;

use super::OperatorSet;
use crate::error::{Error, Result};
use crate::hilbert::{hermitian_part, joint_eigenmanifolds, max_abs, DensityMatrix, C64, I, ZERO};
use crate::noise::{KernelPair, TimeGrid};

/// Master equation with unit rates, `α = I`.
pub fn lindblad_evolve(rho0: &DensityMatrix, ops: &OperatorSet, grid: &TimeGrid) -> Result<Vec<DensityMatrix>> {
    let n = ops.n_channels();
    lindblad_evolve_with_rates(rho0, ops, &DMatrix::identity(n, n), grid)
}

/// RK4 integration of
/// `dρ/dt = −i[H,ρ] + Σ_ij α_ij (L_j ρ L_i† − ½{L_i†L_j, ρ})`,
/// returning `ρ` at the grid's checkpoints. For self-adjoint `L` and `α = I`
/// the dissipator is the double commutator `−½ Σ_i [L_i,[L_i,ρ]]`.
pub fn lindblad_evolve_with_rates(
    rho0: &DensityMatrix,
    ops: &OperatorSet,
    alpha: &DMatrix<C64>,
    grid: &TimeGrid,
) -> Result<Vec<DensityMatrix>> {
    let d = ops.dim();
    let n = ops.n_channels();
    if rho0.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: rho0.dim() });
    }
    if alpha.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: n, found: alpha.nrows() });
    }
    let h = ops.hamiltonian().matrix().clone();
    let l: Vec<DMatrix<C64>> = ops.couplings().iter().map(|o| o.matrix().clone()).collect();
    let ldag: Vec<DMatrix<C64>> = l.iter().map(|m| m.adjoint()).collect();
    // Effective non-Hermitian generator K = −iH − ½ Σ α_ij L_i†L_j.
    let mut k_eff = &h * (-I);
    for i in 0..n {
        for j in 0..n {
            k_eff -= &ldag[i] * &l[j] * (alpha[(i, j)] * 0.5);
        }
    }
    let rhs = |rho: &DMatrix<C64>| -> DMatrix<C64> {
        let mut out = &k_eff * rho + rho * k_eff.adjoint();
        for i in 0..n {
            for j in 0..n {
                if alpha[(i, j)] != ZERO {
                    out += &l[j] * rho * &ldag[i] * alpha[(i, j)];
                }
            }
        }
        out
    };

    let dt = grid.dt;
    let mut rho = rho0.matrix().clone();
    let mut out = Vec::with_capacity(grid.checkpoints.len());
    let mut next = 0;
    if grid.checkpoints.first() == Some(&0) {
        out.push(DensityMatrix::from_raw(rho.clone()));
        next = 1;
    }
    for k in 0..grid.n_steps {
        let k1 = rhs(&rho);
        let k2 = rhs(&(&rho + &k1 * C64::new(0.5 * dt, 0.0)));
        let k3 = rhs(&(&rho + &k2 * C64::new(0.5 * dt, 0.0)));
        let k4 = rhs(&(&rho + &k3 * C64::new(dt, 0.0)));
        rho += (k1 + (k2 + k3) * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0);
        rho = hermitian_part(&rho);
        if next < grid.checkpoints.len() && grid.checkpoints[next] == k + 1 {
            out.push(DensityMatrix::from_raw(rho.clone()));
            next += 1;
        }
    }
    Ok(out)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    let mut nodes = Vec::with_capacity(order);
    for i in 0..order {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for m in 2..=order {
                let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push((0.5 * (1.0 - x), 0.5 * w));
    }
    nodes
}

/// Composite rule on `[0, 1]`: `panels` equal panels of `order` points each.
fn composite_rule(panels: usize, order: usize) -> Vec<(f64, f64)> {
    let base = gauss_legendre(order);
    let width = 1.0 / panels as f64;
    (0..panels)
        .flat_map(|p| base.iter().map(move |&(x, w)| ((p as f64 + x) * width, w * width)))
        .collect()
}

/// `∫_{t0}^{t} dτ ∫_{t0}^{τ} f(τ,s) ds` on the triangle, via `s = t0 + (τ−t0)u`.
fn triangle_integral(t0: f64, t: f64, f: impl Fn(f64, f64) -> C64) -> C64 {
    let rule = composite_rule(16, 16);
    let span = t - t0;
    let mut acc = ZERO;
    for &(x, wx) in &rule {
        let tau = t0 + span * x;
        let inner_span = tau - t0;
        let mut inner = ZERO;
        for &(u, wu) in &rule {
            inner += f(tau, t0 + inner_span * u) * wu;
        }
        acc += inner * (inner_span * wx * span);
    }
    acc
}

/// Ensemble-averaged `ρ(t)` of the linear colored equation in the commuting
/// case, in closed Gaussian form.
///
/// In the joint eigenbasis of the couplings, a trajectory restricted to
/// manifold `m` (eigenvalues `λ^m`) is `exp(λ^m·Z − λ^mᵀ K λ^m)` with
/// `Z_i = ∫z_i`, `K = T_a + T_b` and `T_x = ∫dτ∫^τ x(τ,s) ds` (delta parts
/// adding `½x·(t−t0)`). Averaging `ψ_m ψ_n*` over the Gaussian `Z` gives the
/// factor `exp(½E[X²] − λ^mᵀKλ^m − λ^nᵀK*λ^n)` with `X = λ^m·Z + λ^n·Z*`.
/// The Hamiltonian, which commutes with every coupling, then acts as a unitary.
pub fn analytic_commuting_rho(
    k: &KernelPair,
    ops: &OperatorSet,
    rho0: &DensityMatrix,
    t0: f64,
    t: f64,
) -> Result<DensityMatrix> {
    if !ops.is_commuting() || !ops.all_self_adjoint() {
        return Err(Error::NonCommuting);
    }
    ops.check_channels(k.n_channels())?;
    if rho0.dim() != ops.dim() {
        return Err(Error::DimensionMismatch { expected: ops.dim(), found: rho0.dim() });
    }
    if t < t0 {
        return Err(Error::InvalidInput("analytic solution needs t >= t0".into()));
    }
    let n = k.n_channels();
    let span = t - t0;
    let tri = |delta: &DMatrix<C64>, f: &dyn Fn(usize, usize, f64, f64) -> C64| {
        DMatrix::from_fn(n, n, |i, j| {
            let smooth = if k.smooth_part().is_some() && span > 0.0 {
                triangle_integral(t0, t, |tau, s| f(i, j, tau, s))
            } else {
                ZERO
            };
            smooth + delta[(i, j)] * (0.5 * span)
        })
    };
    let tri_a = tri(k.a_delta(), &|i, j, tau, s| k.a(i, j, tau, s));
    let tri_b = tri(k.b_delta(), &|i, j, tau, s| k.b(i, j, tau, s));
    let kk = &tri_a + &tri_b;
    // E[Z_i Z_j*] = (T_a + T_a†)_ji, E[Z_i Z_j] = (T_b + T_bᵀ)_ij
    let sq_a = &tri_a + tri_a.adjoint();
    let sq_b = &tri_b + tri_b.transpose();

    let eig = joint_eigenmanifolds(ops.couplings(), 1e-9)?;
    let lam: Vec<DMatrix<C64>> = eig
        .eigenvalues
        .iter()
        .map(|v| DMatrix::from_iterator(n, 1, v.iter().map(|&x| C64::new(x, 0.0))))
        .collect();
    let quad = |x: &DMatrix<C64>, m: &DMatrix<C64>, y: &DMatrix<C64>| (x.transpose() * m * y)[(0, 0)];
    let rho = rho0.matrix();
    let mut out = DMatrix::<C64>::zeros(ops.dim(), ops.dim());
    for (p, lp) in eig.projectors.iter().zip(&lam) {
        for (q, lq) in eig.projectors.iter().zip(&lam) {
            let ex2 = quad(lp, &sq_b, lp) + quad(lq, &sq_a, lp) * 2.0 + quad(lq, &sq_b.conjugate(), lq);
            let log_factor = ex2 * 0.5 - quad(lp, &kk, lp) - quad(lq, &kk.conjugate(), lq);
            out += p.matrix() * rho * q.matrix() * log_factor.exp();
        }
    }

    let h = ops.hamiltonian().matrix();
    if max_abs(h) > 0.0 {
        let eh = hermitian_part(h).symmetric_eigen();
        let phases = DMatrix::from_diagonal(&eh.eigenvalues.map(|e| C64::from_polar(1.0, -e * span)));
        let u = &eh.eigenvectors * phases * eh.eigenvectors.adjoint();
        out = &u * out * u.adjoint();
    }
    Ok(DensityMatrix::from_raw(hermitian_part(&out)))
}
