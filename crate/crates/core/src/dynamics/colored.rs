use nalgebra::DMatrix;

use super::white::drive;
use super::{apply_into, combine_into, OperatorSet, Scheme, Stage, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::hilbert::{Operator, StateVector, C64};
use crate::noise::{KernelPair, NoiseKind, NoisePath, TimeGrid};

/// `A_ij(t_k) = ∫_{t0}^{t_k} a_ij(t_k,s) ds` and `B_ij(t_k)` likewise, per
/// grid point. Delta parts enter with the half-endpoint weight, `½α` and
/// `½β`, at every grid time including `t0`, so a white kernel gives a
/// constant drift matching the white integrator.
#[derive(Debug, Clone)]
pub struct MemoryCoefficients {
    pub grid: TimeGrid,
    pub kind: NoiseKind,
    pub a: Vec<DMatrix<C64>>,
    pub b: Vec<DMatrix<C64>>,
}

/// Trapezoid quadrature of the smooth parts over `[t0, t_k]`.
pub fn memory_coefficients(k: &KernelPair, grid: &TimeGrid) -> MemoryCoefficients {
    memory_coefficients_with_endpoint(k, grid, 0.5)
}

/// As [`memory_coefficients`] with the delta weight exposed; anything other
/// than `0.5` is a deliberately wrong convention used by negative controls.
pub(crate) fn memory_coefficients_with_endpoint(k: &KernelPair, grid: &TimeGrid, endpoint: f64) -> MemoryCoefficients {
    let n = k.n_channels();
    let m = grid.len();
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    let delta_a = k.a_delta() * C64::new(endpoint, 0.0);
    let delta_b = k.b_delta() * C64::new(endpoint, 0.0);
    for kk in 0..m {
        let t = grid.time(kk);
        let mut ak = delta_a.clone();
        let mut bk = delta_b.clone();
        if k.smooth_part().is_some() && kk > 0 {
            for l in 0..=kk {
                let w = if l == 0 || l == kk { 0.5 * grid.dt } else { grid.dt };
                let s = grid.time(l);
                for i in 0..n {
                    for j in 0..n {
                        ak[(i, j)] += k.a(i, j, t, s) * w;
                        bk[(i, j)] += k.b(i, j, t, s) * w;
                    }
                }
            }
        }
        a.push(ak);
        b.push(bk);
    }
    MemoryCoefficients { grid: grid.clone(), kind: k.kind(), a, b }
}

/// Memory drift `O(t_k) = −Σ_ij (L_i†A_ij(t_k) + L_iB_ij(t_k)) L_j` per grid
/// point, precomputed once per scenario.
#[derive(Debug, Clone)]
pub struct MemoryDrift {
    grid: TimeGrid,
    kind: NoiseKind,
    drift: Vec<DMatrix<C64>>,
}

impl MemoryDrift {
    pub fn new(ops: &OperatorSet, mem: &MemoryCoefficients) -> Result<Self> {
        let n = ops.n_channels();
        if mem.a.first().is_some_and(|a| a.nrows() != n) {
            return Err(Error::DimensionMismatch { expected: n, found: mem.a[0].nrows() });
        }
        let l = ops.couplings();
        let drift = mem
            .a
            .iter()
            .zip(&mem.b)
            .map(|(a, b)| {
                let mut o = DMatrix::zeros(ops.dim(), ops.dim());
                for i in 0..n {
                    let ldag = l[i].matrix().adjoint();
                    for j in 0..n {
                        let left = &ldag * a[(i, j)] + l[i].matrix() * b[(i, j)];
                        o += left * l[j].matrix();
                    }
                }
                -o
            })
            .collect();
        Ok(Self { grid: mem.grid.clone(), kind: mem.kind, drift })
    }

    pub fn at(&self, k: usize) -> Operator {
        Operator::from_raw(self.drift[k].clone())
    }
}

/// Integrates `dψ/dt = [−iH + Σ_j L_j z_j(t) + O(t)] ψ` with the memory
/// drift of the commuting closure. White paths are treated as piecewise
/// constant increments, smooth paths as piecewise linear between grid points.
pub fn evolve_linear_colored_commuting(
    psi0: &StateVector,
    ops: &OperatorSet,
    path: &NoisePath,
    drift: &MemoryDrift,
    scheme: Scheme,
) -> Result<TrajectoryRecord> {
    if !ops.is_commuting() {
        return Err(Error::NonCommuting);
    }
    ops.check_state(psi0)?;
    ops.check_channels(path.n_channels())?;
    if drift.kind == NoiseKind::Mixed || path.kind == NoiseKind::Mixed {
        return Err(Error::UnsupportedKernel(
            "kernels with both smooth and delta parts are not supported by the colored integrator".into(),
        ));
    }
    if drift.kind != path.kind {
        return Err(Error::UnsupportedKernel("noise path and memory drift come from different kernel kinds".into()));
    }
    if !drift.grid.same_times(&path.grid) {
        return Err(Error::GridMismatch("memory drift and noise path use different grids".into()));
    }
    let minus_i_h = ops.minus_i_h();
    let l: Vec<&DMatrix<C64>> = ops.couplings().iter().map(Operator::matrix).collect();
    let generator = |dst: &mut DMatrix<C64>, k: usize, noise_at: usize, base: &mut DMatrix<C64>| {
        base.copy_from(&minus_i_h);
        *base += &drift.drift[k];
        let terms: Vec<(C64, &DMatrix<C64>)> =
            l.iter().enumerate().map(|(j, m)| (path.values[(j, noise_at)], *m)).collect();
        combine_into(dst, base, &terms);
    };
    let dim = ops.dim();
    let (mut g0, mut g1, mut gm, mut base) =
        (DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim));
    let white = path.kind == NoiseKind::White;
    let mut current = usize::MAX;
    drive(psi0, &path.grid, scheme, false, |k, stage, x, out| {
        if k != current {
            if white {
                generator(&mut g0, k, k, &mut base);
            } else {
                generator(&mut g0, k, k, &mut base);
                generator(&mut g1, k + 1, k + 1, &mut base);
                gm.copy_from(&g0);
                gm += &g1;
                gm *= C64::new(0.5, 0.0);
            }
            current = k;
        }
        let g = match (white, stage) {
            (true, _) | (false, Stage::Start) => &g0,
            (false, Stage::Mid) => &gm,
            (false, Stage::End) => &g1,
        };
        apply_into(g, x, out);
    })
}
