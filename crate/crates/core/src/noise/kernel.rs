use std::fmt;
use std::io::Read;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::TimeGrid;
use crate::error::{Error, Result};
use crate::hilbert::{C64, ZERO};

/// Largest augmented covariance (2 · channels · grid points) built for colored noise.
pub const MAX_AUGMENTED_SIZE: usize = 4096;

/// Tolerance used when a caller does not supply one.
pub const DEFAULT_KERNEL_TOL: f64 = 1e-9;

/// Smooth (non-delta) part of a kernel pair: `a_ij(t,s) = ⟨⟨z*_i(t) z_j(s)⟩⟩`
/// and `b_ij(t,s) = ⟨⟨z_i(t) z_j(s)⟩⟩`, in units of 1/time.
pub trait SmoothKernel: Send + Sync + fmt::Debug {
    fn channels(&self) -> usize;
    fn covariance(&self, i: usize, j: usize, t: f64, s: f64) -> C64;
    fn pseudo_covariance(&self, i: usize, j: usize, t: f64, s: f64) -> C64;

    /// Time interval on which the kernel is defined, if bounded.
    fn domain(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Stationary exponential kernel `(γ/2) e^{−γ|t−s|}` on independent channels,
/// scaled by `a_scale` for the covariance and `b_scale` for the pseudo-covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialKernel {
    pub gamma: f64,
    pub channels: usize,
    pub a_scale: C64,
    pub b_scale: C64,
}

impl ExponentialKernel {
    fn profile(&self, t: f64, s: f64) -> f64 {
        0.5 * self.gamma * (-self.gamma * (t - s).abs()).exp()
    }
}

impl SmoothKernel for ExponentialKernel {
    fn channels(&self) -> usize {
        self.channels
    }

    fn covariance(&self, i: usize, j: usize, t: f64, s: f64) -> C64 {
        if i == j {
            self.a_scale * self.profile(t, s)
        } else {
            ZERO
        }
    }

    fn pseudo_covariance(&self, i: usize, j: usize, t: f64, s: f64) -> C64 {
        if i == j {
            self.b_scale * self.profile(t, s)
        } else {
            ZERO
        }
    }
}

/// Kernel tabulated on a set of time nodes, bilinearly interpolated in `(t, s)`.
///
/// CSV columns: `i, j, t, s, re_a, im_a, re_b, im_b`, one row per channel
/// pair and node pair. Every combination must be present.
#[derive(Debug, Clone)]
pub struct TabulatedKernel {
    channels: usize,
    times: Vec<f64>,
    a: Vec<C64>,
    b: Vec<C64>,
}

impl TabulatedKernel {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::InvalidInput(format!("kernel csv: {e}")))?;
            if rec.len() != 8 {
                return Err(Error::InvalidInput(format!(
                    "kernel csv row {}: expected 8 columns, found {}",
                    line + 2,
                    rec.len()
                )));
            }
            let num = |k: usize| -> Result<f64> {
                rec[k].parse::<f64>().map_err(|e| {
                    Error::InvalidInput(format!("kernel csv row {} column {}: {e}", line + 2, k + 1))
                })
            };
            let idx = |k: usize| -> Result<usize> {
                rec[k].parse::<usize>().map_err(|e| {
                    Error::InvalidInput(format!("kernel csv row {} column {}: {e}", line + 2, k + 1))
                })
            };
            rows.push((
                idx(0)?,
                idx(1)?,
                num(2)?,
                num(3)?,
                C64::new(num(4)?, num(5)?),
                C64::new(num(6)?, num(7)?),
            ));
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput("kernel csv has no rows".into()));
        }

        let channels = rows.iter().map(|r| r.0.max(r.1)).max().unwrap_or(0) + 1;
        let mut times: Vec<f64> = rows.iter().flat_map(|r| [r.2, r.3]).collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));

        let nt = times.len();
        let mut a = vec![C64::new(f64::NAN, 0.0); channels * channels * nt * nt];
        let mut b = a.clone();
        let locate = |t: f64| times.iter().position(|&x| (x - t).abs() <= 1e-12 * x.abs().max(1.0));
        for (i, j, t, s, av, bv) in rows {
            let (k, l) = (locate(t).unwrap(), locate(s).unwrap());
            let pos = ((i * channels + j) * nt + k) * nt + l;
            a[pos] = av;
            b[pos] = bv;
        }
        if a.iter().any(|z| z.re.is_nan()) {
            return Err(Error::InvalidInput(format!(
                "kernel csv is incomplete: need all {channels}x{channels} channel pairs on all {nt}x{nt} node pairs"
            )));
        }
        Ok(Self { channels, times, a, b })
    }

    fn bracket(&self, t: f64) -> (usize, f64) {
        let nt = self.times.len();
        if nt == 1 {
            return (0, 0.0);
        }
        let t = t.clamp(self.times[0], self.times[nt - 1]);
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => k.min(nt - 2),
            Err(k) => k.saturating_sub(1).min(nt - 2),
        };
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        (k, w)
    }

    fn interpolate(&self, table: &[C64], i: usize, j: usize, t: f64, s: f64) -> C64 {
        let nt = self.times.len();
        let base = (i * self.channels + j) * nt * nt;
        let at = |k: usize, l: usize| table[base + k * nt + l];
        let (k, wt) = self.bracket(t);
        let (l, ws) = self.bracket(s);
        if nt == 1 {
            return at(0, 0);
        }
        at(k, l) * (1.0 - wt) * (1.0 - ws)
            + at(k + 1, l) * wt * (1.0 - ws)
            + at(k, l + 1) * (1.0 - wt) * ws
            + at(k + 1, l + 1) * wt * ws
    }
}

impl SmoothKernel for TabulatedKernel {
    fn channels(&self) -> usize {
        self.channels
    }

    fn covariance(&self, i: usize, j: usize, t: f64, s: f64) -> C64 {
        self.interpolate(&self.a, i, j, t, s)
    }

    fn pseudo_covariance(&self, i: usize, j: usize, t: f64, s: f64) -> C64 {
        self.interpolate(&self.b, i, j, t, s)
    }

    fn domain(&self) -> Option<(f64, f64)> {
        Some((self.times[0], *self.times.last().unwrap()))
    }
}

/// Which discretization convention a kernel's samples follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Delta-correlated only: grid values are step-averaged increments.
    White,
    /// Smooth kernel only: grid values are point values of the process.
    Smooth,
    /// Both parts present.
    Mixed,
}

/// Covariance `a_ij(t,s)` and pseudo-covariance `b_ij(t,s)` of a zero-mean
/// multichannel complex Gaussian process. Delta components `α δ(t−s)` and
/// `β δ(t−s)` are kept as coefficient matrices and never evaluated at a point.
#[derive(Clone)]
pub struct KernelPair {
    n_channels: usize,
    smooth: Option<Arc<dyn SmoothKernel>>,
    a_delta: DMatrix<C64>,
    b_delta: DMatrix<C64>,
    label: String,
}

impl fmt::Debug for KernelPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelPair")
            .field("label", &self.label)
            .field("n_channels", &self.n_channels)
            .field("smooth", &self.smooth)
            .field("a_delta", &self.a_delta)
            .field("b_delta", &self.b_delta)
            .finish()
    }
}

impl KernelPair {
    /// Purely white kernel pair with coefficients `α` (covariance) and `β`
    /// (pseudo-covariance).
    pub fn white(alpha: DMatrix<C64>, beta: DMatrix<C64>) -> Result<Self> {
        let n = alpha.nrows();
        if alpha.ncols() != n || beta.nrows() != n || beta.ncols() != n || n == 0 {
            return Err(Error::InvalidInput("delta coefficients must be equal square matrices".into()));
        }
        Ok(Self { n_channels: n, smooth: None, a_delta: alpha, b_delta: beta, label: "white".into() })
    }

    pub fn smooth(kernel: Arc<dyn SmoothKernel>) -> Self {
        let n = kernel.channels();
        Self {
            n_channels: n,
            smooth: Some(kernel),
            a_delta: DMatrix::zeros(n, n),
            b_delta: DMatrix::zeros(n, n),
            label: "smooth".into(),
        }
    }

    /// Adds delta components to a smooth kernel.
    pub fn with_delta(mut self, alpha: DMatrix<C64>, beta: DMatrix<C64>) -> Result<Self> {
        let n = self.n_channels;
        if alpha.shape() != (n, n) || beta.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, found: alpha.nrows() });
        }
        self.a_delta = alpha;
        self.b_delta = beta;
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// `α = I`, `β = 0`: phase-invariant white noise.
    pub fn circular_white(n: usize) -> Self {
        Self::white(DMatrix::identity(n, n), DMatrix::zeros(n, n))
            .unwrap()
            .with_label("circular_white")
    }

    /// `w = e^{iφ} x` with `x` real unit white noise: `α = I`, `β = e^{2iφ} I`.
    pub fn rotated_real_white(n: usize, phi: f64) -> Self {
        let beta = DMatrix::identity(n, n) * C64::from_polar(1.0, 2.0 * phi);
        Self::white(DMatrix::identity(n, n), beta)
            .unwrap()
            .with_label(format!("rotated_real_white(phi={phi})"))
    }

    pub fn real_white(n: usize) -> Self {
        Self::white(DMatrix::identity(n, n), DMatrix::identity(n, n))
            .unwrap()
            .with_label("real_white")
    }

    pub fn imaginary_white(n: usize) -> Self {
        Self::white(DMatrix::identity(n, n), -DMatrix::identity(n, n))
            .unwrap()
            .with_label("imaginary_white")
    }

    /// `a = b = (γ/2) e^{−γ|t−s|}`.
    pub fn real_ou(n: usize, gamma: f64) -> Self {
        Self::general_ou(n, gamma, C64::new(1.0, 0.0)).with_label(format!("real_ou(gamma={gamma})"))
    }

    /// `a = −b = (γ/2) e^{−γ|t−s|}`.
    pub fn imaginary_ou(n: usize, gamma: f64) -> Self {
        Self::general_ou(n, gamma, C64::new(-1.0, 0.0))
            .with_label(format!("imaginary_ou(gamma={gamma})"))
    }

    /// `a = (γ/2) e^{−γ|t−s|}`, `b = β_scale · a`; realizable iff `|β_scale| ≤ 1`.
    pub fn general_ou(n: usize, gamma: f64, beta_scale: C64) -> Self {
        Self::smooth(Arc::new(ExponentialKernel {
            gamma,
            channels: n,
            a_scale: C64::new(1.0, 0.0),
            b_scale: beta_scale,
        }))
        .with_label(format!("general_ou(gamma={gamma}, beta_scale={beta_scale})"))
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn a_delta(&self) -> &DMatrix<C64> {
        &self.a_delta
    }

    pub fn b_delta(&self) -> &DMatrix<C64> {
        &self.b_delta
    }

    pub fn smooth_part(&self) -> Option<&Arc<dyn SmoothKernel>> {
        self.smooth.as_ref()
    }

    pub fn has_delta(&self) -> bool {
        self.a_delta.iter().chain(self.b_delta.iter()).any(|z| z.norm() > 0.0)
    }

    pub fn kind(&self) -> NoiseKind {
        match (self.smooth.is_some(), self.has_delta()) {
            (true, true) => NoiseKind::Mixed,
            (true, false) => NoiseKind::Smooth,
            // A kernel with neither part is the zero process; treat it as white.
            (false, _) => NoiseKind::White,
        }
    }

    /// Smooth covariance `a_ij(t,s)`; zero when there is no smooth part.
    pub fn a(&self, i: usize, j: usize, t: f64, s: f64) -> C64 {
        self.smooth.as_ref().map_or(ZERO, |k| k.covariance(i, j, t, s))
    }

    /// Smooth pseudo-covariance `b_ij(t,s)`.
    pub fn b(&self, i: usize, j: usize, t: f64, s: f64) -> C64 {
        self.smooth.as_ref().map_or(ZERO, |k| k.pseudo_covariance(i, j, t, s))
    }

    /// Covariance per unit time of the real increments
    /// `(dX_0..dX_{n−1}, dY_0..dY_{n−1})` generated by the delta components.
    pub fn white_block(&self) -> DMatrix<f64> {
        let n = self.n_channels;
        let (al, be) = (&self.a_delta, &self.b_delta);
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (al[(i, j)], be[(i, j)]);
                m[(i, j)] = 0.5 * (a + b).re;
                m[(n + i, n + j)] = 0.5 * (a - b).re;
                m[(i, n + j)] = 0.5 * (a + b).im;
                m[(n + i, j)] = 0.5 * (b - a).im;
            }
        }
        (&m + m.transpose()) * 0.5
    }
}

/// Real covariance of the stacked vector `(x_i(t_k), y_i(t_k))`, laid out
/// as `[x_0(t_0..t_M), …, x_{n−1}(·), y_0(·), …, y_{n−1}(·)]`.
///
/// From `z = x + iy`:
/// `a = ⟨xx⟩ + ⟨yy⟩ + i(⟨x_i y_j⟩ − ⟨y_i x_j⟩)` and
/// `b = ⟨xx⟩ − ⟨yy⟩ + i(⟨x_i y_j⟩ + ⟨y_i x_j⟩)`, hence
/// `⟨x_i x_j⟩ = ½Re(a+b)`, `⟨y_i y_j⟩ = ½Re(a−b)`,
/// `⟨x_i y_j⟩ = ½Im(a+b)`, `⟨y_i x_j⟩ = ½Im(b−a)`.
/// With `b = 0` the x–y cross moment is `+½ Im a`.
pub fn augmented_covariance(k: &KernelPair, grid: &TimeGrid) -> Result<DMatrix<f64>> {
    check_consistency(k, grid, DEFAULT_KERNEL_TOL)?;
    augmented_covariance_unchecked(k, grid, 1.0)
}

pub(crate) fn augmented_covariance_unchecked(
    k: &KernelPair,
    grid: &TimeGrid,
    cross_sign: f64,
) -> Result<DMatrix<f64>> {
    let n = k.n_channels();
    let m = grid.len();
    let size = 2 * n * m;
    if size > MAX_AUGMENTED_SIZE {
        return Err(Error::GridTooLarge { size, cap: MAX_AUGMENTED_SIZE });
    }
    let xi = |i: usize, t: usize| i * m + t;
    let yi = |i: usize, t: usize| n * m + i * m + t;
    let inv_dt = 1.0 / grid.dt;

    let mut c = DMatrix::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            for kt in 0..m {
                let t = grid.time(kt);
                for ls in 0..m {
                    let s = grid.time(ls);
                    let mut a = k.a(i, j, t, s);
                    let mut b = k.b(i, j, t, s);
                    if kt == ls {
                        a += k.a_delta[(i, j)] * inv_dt;
                        b += k.b_delta[(i, j)] * inv_dt;
                    }
                    c[(xi(i, kt), xi(j, ls))] = 0.5 * (a + b).re;
                    c[(yi(i, kt), yi(j, ls))] = 0.5 * (a - b).re;
                    c[(xi(i, kt), yi(j, ls))] = cross_sign * 0.5 * (a + b).im;
                    c[(yi(i, kt), xi(j, ls))] = cross_sign * 0.5 * (b - a).im;
                }
            }
        }
    }
    Ok((&c + c.transpose()) * 0.5)
}

fn check_consistency(k: &KernelPair, grid: &TimeGrid, tol: f64) -> Result<()> {
    let n = k.n_channels();
    if let Some(s) = k.smooth_part() {
        if let Some((lo, hi)) = s.domain() {
            let slack = 1e-9 * grid.dt;
            if grid.t0 < lo - slack || grid.time(grid.n_steps) > hi + slack {
                return Err(Error::InconsistentKernel(format!(
                    "grid [{}, {}] extends beyond the tabulated range [{lo}, {hi}]",
                    grid.t0,
                    grid.time(grid.n_steps)
                )));
            }
        }
    }
    let al = k.a_delta();
    let be = k.b_delta();
    let scale = al.iter().chain(be.iter()).map(|z| z.norm()).fold(1.0, f64::max);
    for i in 0..n {
        for j in 0..n {
            if (al[(i, j)] - al[(j, i)].conj()).norm() > tol * scale {
                return Err(Error::InconsistentKernel(format!("alpha[{i},{j}] != conj(alpha[{j},{i}])")));
            }
            if (be[(i, j)] - be[(j, i)]).norm() > tol * scale {
                return Err(Error::InconsistentKernel(format!("beta[{i},{j}] != beta[{j},{i}]")));
            }
        }
    }
    if k.smooth_part().is_none() {
        return Ok(());
    }
    let m = grid.len();
    let mut scale = 1.0_f64;
    for i in 0..n {
        for kt in 0..m {
            scale = scale.max(k.a(i, i, grid.time(kt), grid.time(kt)).norm());
        }
    }
    for i in 0..n {
        for j in 0..n {
            for kt in 0..m {
                let t = grid.time(kt);
                for ls in 0..m {
                    let s = grid.time(ls);
                    if (k.a(i, j, t, s) - k.a(j, i, s, t).conj()).norm() > tol * scale {
                        return Err(Error::InconsistentKernel(format!(
                            "a[{i},{j}]({t},{s}) != conj(a[{j},{i}]({s},{t}))"
                        )));
                    }
                    if (k.b(i, j, t, s) - k.b(j, i, s, t)).norm() > tol * scale {
                        return Err(Error::InconsistentKernel(format!(
                            "b[{i},{j}]({t},{s}) != b[{j},{i}]({s},{t})"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_psd(c: &DMatrix<f64>, tol: f64) -> Result<()> {
    let max_diag = c.diagonal().iter().copied().fold(0.0, f64::max);
    let min_eig = c.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = -tol * max_diag;
    if min_eig < threshold {
        return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min_eig, threshold });
    }
    Ok(())
}

/// Checks the consistency conditions `a_ij(t,s) = a*_ji(s,t)`,
/// `b_ij(t,s) = b_ji(s,t)` and that the kernel pair is realizable, i.e. its
/// augmented covariance is positive semidefinite on `grid`.
///
/// Purely white kernels are checked on their per-unit-time block, which does
/// not depend on the grid.
pub fn validate_kernel(k: &KernelPair, grid: &TimeGrid, tol: f64) -> Result<()> {
    check_consistency(k, grid, tol)?;
    match k.kind() {
        NoiseKind::White => check_psd(&k.white_block(), tol),
        NoiseKind::Smooth | NoiseKind::Mixed => {
            check_psd(&augmented_covariance_unchecked(k, grid, 1.0)?, tol)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_steps: usize, dt: f64) -> TimeGrid {
        TimeGrid::uniform(0.0, dt, n_steps, 1).unwrap()
    }

    #[test]
    fn circular_smooth_blocks_match_real_and_imaginary_parts() {
        // a(t,s) = e^{iω(t−s)} e^{−|t−s|}: Hermitian, circular (b = 0).
        #[derive(Debug)]
        struct Rotating;
        impl SmoothKernel for Rotating {
            fn channels(&self) -> usize {
                1
            }
            fn covariance(&self, _: usize, _: usize, t: f64, s: f64) -> C64 {
                C64::from_polar((-(t - s).abs()).exp(), 1.3 * (t - s))
            }
            fn pseudo_covariance(&self, _: usize, _: usize, _: f64, _: f64) -> C64 {
                ZERO
            }
        }
        let k = KernelPair::smooth(Arc::new(Rotating));
        let g = grid(4, 0.25);
        let c = augmented_covariance(&k, &g).unwrap();
        let m = g.len();
        for kt in 0..m {
            for ls in 0..m {
                let a = k.a(0, 0, g.time(kt), g.time(ls));
                assert!((c[(kt, ls)] - 0.5 * a.re).abs() < 1e-15);
                assert!((c[(m + kt, m + ls)] - 0.5 * a.re).abs() < 1e-15);
                assert!((c[(kt, m + ls)] - 0.5 * a.im).abs() < 1e-15);
                assert!((c[(m + kt, ls)] + 0.5 * a.im).abs() < 1e-15);
                // cross block antisymmetric under (t) <-> (s)
                assert!((c[(kt, m + ls)] + c[(ls, m + kt)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn real_and_imaginary_limits() {
        let g = grid(3, 0.1);
        let m = g.len();
        let real = augmented_covariance(&KernelPair::real_ou(1, 2.0), &g).unwrap();
        let imag = augmented_covariance(&KernelPair::imaginary_ou(1, 2.0), &g).unwrap();
        for kt in 0..m {
            for ls in 0..m {
                let cts = 1.0 * (-2.0 * (g.time(kt) - g.time(ls)).abs()).exp();
                assert!((real[(kt, ls)] - cts).abs() < 1e-14);
                assert_eq!(real[(m + kt, m + ls)], 0.0);
                assert_eq!(imag[(kt, ls)], 0.0);
                assert!((imag[(m + kt, m + ls)] - cts).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn white_delta_scales_with_inverse_dt() {
        let g = grid(2, 0.01);
        let c = augmented_covariance(&KernelPair::circular_white(1), &g).unwrap();
        assert!((c[(0, 0)] - 50.0).abs() < 1e-12);
        assert!((c[(3, 3)] - 50.0).abs() < 1e-12);
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn validation_cases() {
        let g = grid(19, 0.05);
        assert!(validate_kernel(&KernelPair::circular_white(1), &g, 1e-9).is_ok());
        assert!(validate_kernel(&KernelPair::real_ou(1, 1.5), &g, 1e-9).is_ok());
        assert!(validate_kernel(&KernelPair::general_ou(1, 1.5, C64::new(0.3, 0.4)), &g, 1e-9).is_ok());

        // a = 0, b = C: ⟨⟨yy⟩⟩ = −½C.
        let b_only = KernelPair::smooth(Arc::new(ExponentialKernel {
            gamma: 1.0,
            channels: 1,
            a_scale: ZERO,
            b_scale: C64::new(1.0, 0.0),
        }));
        assert!(matches!(
            validate_kernel(&b_only, &g, 1e-9),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        let b_only_white = KernelPair::white(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(
            validate_kernel(&b_only_white, &g, 1e-9),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        // |β_scale| > 1 is not realizable either.
        assert!(matches!(
            validate_kernel(&KernelPair::general_ou(1, 1.0, C64::new(1.2, 0.0)), &g, 1e-9),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn single_point_pseudo_only_oracle() {
        // 2x2 augmented covariance of the single point [[½c, 0], [0, −½c]].
        let c = nalgebra::Matrix2::<f64>::new(0.5, 0.0, 0.0, -0.5);
        let min: f64 = c.symmetric_eigenvalues().min();
        assert!(min < 0.0);
        let k = KernelPair::white(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let block = k.white_block();
        assert!((block[(1, 1)] - min).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_kernels_rejected() {
        let g = grid(2, 0.1);
        let bad_alpha = DMatrix::from_row_slice(2, 2, &[
            C64::new(1.0, 0.0), C64::new(0.2, 0.1),
            C64::new(0.2, 0.1), C64::new(1.0, 0.0),
        ]);
        let k = KernelPair::white(bad_alpha, DMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(validate_kernel(&k, &g, 1e-9), Err(Error::InconsistentKernel(_))));

        #[derive(Debug)]
        struct Skewed;
        impl SmoothKernel for Skewed {
            fn channels(&self) -> usize {
                1
            }
            fn covariance(&self, _: usize, _: usize, t: f64, s: f64) -> C64 {
                C64::new((-(t - 2.0 * s).abs()).exp(), 0.0)
            }
            fn pseudo_covariance(&self, _: usize, _: usize, _: f64, _: f64) -> C64 {
                ZERO
            }
        }
        let k = KernelPair::smooth(Arc::new(Skewed));
        assert!(matches!(augmented_covariance(&k, &g), Err(Error::InconsistentKernel(_))));
    }

    #[test]
    fn oversized_grid_rejected() {
        let g = grid(2048, 1e-3);
        assert!(matches!(
            augmented_covariance(&KernelPair::real_ou(1, 1.0), &g),
            Err(Error::GridTooLarge { size: 4098, .. })
        ));
    }

    #[test]
    fn tabulated_kernel_round_trip() {
        let mut csv = String::from("i,j,t,s,re_a,im_a,re_b,im_b\n");
        let times = [0.0f64, 0.5, 1.0];
        for &t in &times {
            for &s in &times {
                let v = (-(t - s).abs()).exp();
                csv.push_str(&format!("0,0,{t},{s},{v},0,{},0\n", 0.5 * v));
            }
        }
        let tab = TabulatedKernel::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(tab.channels(), 1);
        assert!((tab.covariance(0, 0, 0.5, 1.0).re - (-0.5f64).exp()).abs() < 1e-15);
        // bilinear between the nodes
        let mid = tab.covariance(0, 0, 0.25, 0.0).re;
        assert!((mid - 0.5 * (1.0 + (-0.5f64).exp())).abs() < 1e-15);
        let k = KernelPair::smooth(Arc::new(tab));
        assert!(validate_kernel(&k, &grid(4, 0.25), 1e-9).is_ok());
        assert!(matches!(
            validate_kernel(&k, &grid(4, 0.5), 1e-9),
            Err(Error::InconsistentKernel(_))
        ));

        let incomplete = "i,j,t,s,re_a,im_a,re_b,im_b\n0,0,0,0,1,0,0,0\n0,0,0,1,1,0,0,0\n";
        assert!(TabulatedKernel::from_csv(incomplete.as_bytes()).is_err());
    }
}
