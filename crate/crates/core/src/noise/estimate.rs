use super::kernel::augmented_covariance_unchecked;
use super::{validate_kernel, KernelPair, NoisePath, NoiseSampler, TimeGrid, DEFAULT_KERNEL_TOL};
use crate::error::{Error, Result};
use crate::hilbert::C64;
#[cfg(test)]
use crate::hilbert::ZERO;

/// Sample moments `â_ij(t_k,t_l) = ⟨⟨z*_i(t_k) z_j(t_l)⟩⟩` and
/// `b̂_ij(t_k,t_l) = ⟨⟨z_i(t_k) z_j(t_l)⟩⟩` with standard errors of the real
/// and imaginary parts.
#[derive(Debug, Clone)]
pub struct EmpiricalCovariance {
    pub n_channels: usize,
    pub n_points: usize,
    pub n_paths: usize,
    a: Vec<C64>,
    b: Vec<C64>,
    a_se: Vec<(f64, f64)>,
    b_se: Vec<(f64, f64)>,
}

impl EmpiricalCovariance {
    fn pos(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.n_channels + j) * self.n_points + k) * self.n_points + l
    }

    pub fn a(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        self.a[self.pos(i, j, k, l)]
    }

    pub fn b(&self, i: usize, j: usize, k: usize, l: usize) -> C64 {
        self.b[self.pos(i, j, k, l)]
    }

    /// Standard errors of `(Re â, Im â)`.
    pub fn a_std_error(&self, i: usize, j: usize, k: usize, l: usize) -> (f64, f64) {
        self.a_se[self.pos(i, j, k, l)]
    }

    pub fn b_std_error(&self, i: usize, j: usize, k: usize, l: usize) -> (f64, f64) {
        self.b_se[self.pos(i, j, k, l)]
    }
}

#[derive(Default, Clone, Copy)]
struct Moments {
    sum: C64,
    sq_re: f64,
    sq_im: f64,
}

impl Moments {
    fn push(&mut self, z: C64) {
        self.sum += z;
        self.sq_re += z.re * z.re;
        self.sq_im += z.im * z.im;
    }

    fn finish(&self, n: f64) -> (C64, (f64, f64)) {
        let mean = self.sum / n;
        let var_re = ((self.sq_re / n - mean.re * mean.re) * n / (n - 1.0)).max(0.0);
        let var_im = ((self.sq_im / n - mean.im * mean.im) * n / (n - 1.0)).max(0.0);
        (mean, ((var_re / n).sqrt(), (var_im / n).sqrt()))
    }
}

pub fn empirical_covariance(paths: &[NoisePath]) -> Result<EmpiricalCovariance> {
    if paths.len() < 2 {
        return Err(Error::InvalidInput("empirical covariance needs at least two paths".into()));
    }
    let first = &paths[0];
    let (n, m) = (first.n_channels(), first.grid.len());
    if paths.iter().any(|p| p.n_channels() != n || !p.grid.same_times(&first.grid)) {
        return Err(Error::GridMismatch("paths do not share a grid".into()));
    }
    let size = n * n * m * m;
    let mut acc_a = vec![Moments::default(); size];
    let mut acc_b = vec![Moments::default(); size];
    for p in paths {
        for i in 0..n {
            for j in 0..n {
                for k in 0..m {
                    let zi = p.values[(i, k)];
                    let base = ((i * n + j) * m + k) * m;
                    for l in 0..m {
                        let zj = p.values[(j, l)];
                        acc_a[base + l].push(zi.conj() * zj);
                        acc_b[base + l].push(zi * zj);
                    }
                }
            }
        }
    }
    let count = paths.len() as f64;
    let (a, a_se) = acc_a.iter().map(|m| m.finish(count)).unzip();
    let (b, b_se) = acc_b.iter().map(|m| m.finish(count)).unzip();
    Ok(EmpiricalCovariance { n_channels: n, n_points: m, n_paths: paths.len(), a, b, a_se, b_se })
}

/// Test functionals `F[x]` of the real part of a scalar process, with
/// `u = ∫ f(s) x(s) ds` and `f ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunctional {
    /// `F = u`, `δF/δx(s) = f(s)`.
    Linear,
    /// `F = e^u`, `δF/δx(s) = f(s) e^u`.
    Exponential,
}

impl std::str::FromStr for TestFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::UnsupportedFunctional(format!(
                "unknown functional '{other}' (expected linear or exponential)"
            ))),
        }
    }
}

/// Monte Carlo check of `⟨⟨x(t) F[x]⟩⟩ = ∫ C(t,s) ⟨⟨δF/δx(s)⟩⟩ ds`.
///
/// `residual` and `std_error` are normalized by the larger of the two sides;
/// both are zero when both sides vanish.
#[derive(Debug, Clone, Copy)]
pub struct FunctionalResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub std_error: f64,
}

impl FunctionalResidual {
    pub fn within(&self, sigmas: f64) -> bool {
        self.residual <= sigmas * self.std_error
    }
}

/// Evaluates the Gaussian integration-by-parts identity at the final grid
/// time, with `∫ ds` discretized by the trapezoid rule on `grid` and `C` the
/// covariance of `x = Re z`.
pub fn furutsu_novikov_residual(
    k: &KernelPair,
    grid: &TimeGrid,
    functional: TestFunctional,
    n_samples: usize,
    seed: u64,
) -> Result<FunctionalResidual> {
    if k.n_channels() != 1 {
        return Err(Error::InvalidInput("Furutsu-Novikov check is defined for one channel".into()));
    }
    if n_samples < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    validate_kernel(k, grid, DEFAULT_KERNEL_TOL)?;
    let m = grid.len();
    let cov = augmented_covariance_unchecked(k, grid, 1.0)?;
    let weights: Vec<f64> = (0..m)
        .map(|l| if l == 0 || l == m - 1 { 0.5 * grid.dt } else { grid.dt })
        .collect();
    let t = m - 1;
    // ∫ C(t,s) f(s) ds with f ≡ 1
    let kernel_integral: f64 = (0..m).map(|l| cov[(t, l)] * weights[l]).sum();

    let sampler = NoiseSampler::new(k, grid)?;
    let (mut sum_lhs, mut sum_rhs, mut sum_d, mut sum_d2) = (0.0, 0.0, 0.0, 0.0);
    for r in 0..n_samples {
        let path = sampler.sample(seed, r as u64);
        let x = |l: usize| path.values[(0, l)].re;
        let u: f64 = (0..m).map(|l| weights[l] * x(l)).sum();
        let (f, df) = match functional {
            TestFunctional::Linear => (u, 1.0),
            TestFunctional::Exponential => {
                let e = u.exp();
                (e, e)
            }
        };
        let lhs = x(t) * f;
        let rhs = kernel_integral * df;
        let d = lhs - rhs;
        sum_lhs += lhs;
        sum_rhs += rhs;
        sum_d += d;
        sum_d2 += d * d;
    }
    let n = n_samples as f64;
    let (lhs, rhs) = (sum_lhs / n, sum_rhs / n);
    let mean_d = sum_d / n;
    let se_d = ((sum_d2 / n - mean_d * mean_d).max(0.0) / (n - 1.0)).sqrt();
    let scale = lhs.abs().max(rhs.abs());
    let (residual, std_error) = if scale > 0.0 { (mean_d.abs() / scale, se_d / scale) } else { (0.0, 0.0) };
    Ok(FunctionalResidual { lhs, rhs, residual, std_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    #[test]
    fn zero_paths_give_zero_estimates() {
        let g = TimeGrid::uniform(0.0, 0.1, 3, 1).unwrap();
        let paths = vec![NoisePath::zeros(&g, 1, super::super::NoiseKind::Smooth); 4];
        let emp = empirical_covariance(&paths).unwrap();
        for k in 0..4 {
            for l in 0..4 {
                assert_eq!(emp.a(0, 0, k, l), ZERO);
                assert_eq!(emp.b(0, 0, k, l), ZERO);
            }
        }
    }

    #[test]
    fn real_paths_give_equal_estimates() {
        let g = TimeGrid::uniform(0.0, 0.1, 5, 1).unwrap();
        let s = NoiseSampler::new(&KernelPair::real_ou(1, 1.0), &g).unwrap();
        let p = s.sample(3, 0);
        let emp = empirical_covariance(&[p.clone(), p]).unwrap();
        for k in 0..6 {
            for l in 0..6 {
                assert_eq!(emp.a(0, 0, k, l), emp.b(0, 0, k, l));
            }
        }
    }

    #[test]
    fn too_few_or_mismatched_paths() {
        let g = TimeGrid::uniform(0.0, 0.1, 3, 1).unwrap();
        let h = TimeGrid::uniform(0.0, 0.2, 3, 1).unwrap();
        let kind = super::super::NoiseKind::Smooth;
        assert!(empirical_covariance(&[NoisePath::zeros(&g, 1, kind)]).is_err());
        assert!(empirical_covariance(&[NoisePath::zeros(&g, 1, kind), NoisePath::zeros(&h, 1, kind)]).is_err());
    }

    #[test]
    fn zero_kernel_has_zero_residual() {
        let g = TimeGrid::uniform(0.0, 0.1, 10, 1).unwrap();
        let zero = KernelPair::smooth(Arc::new(super::super::ExponentialKernel {
            gamma: 1.0,
            channels: 1,
            a_scale: ZERO,
            b_scale: ZERO,
        }));
        for f in [TestFunctional::Linear, TestFunctional::Exponential] {
            let r = furutsu_novikov_residual(&zero, &g, f, 100, 1).unwrap();
            assert_eq!(r.residual, 0.0);
            assert_eq!(r.lhs, 0.0);
        }
    }

    #[test]
    fn linear_functional_matches_closed_form() {
        // ⟨⟨x(t) ∫x⟩⟩ = ∫C(t,s)ds exactly; the Monte Carlo lhs must agree within 4σ.
        let g = TimeGrid::uniform(0.0, 0.05, 20, 1).unwrap();
        let k = KernelPair::real_ou(1, 2.0);
        let r = furutsu_novikov_residual(&k, &g, TestFunctional::Linear, 20_000, 11).unwrap();
        // trapezoid of (γ/2)e^{−γ(T−s)} on [0,1] is close to ½(1 − e^{−2})
        assert!((r.rhs - 0.5 * (1.0 - (-2.0f64).exp())).abs() < 2e-3);
        assert!(r.within(4.0), "{r:?}");
    }

    #[test]
    fn unsupported_inputs() {
        assert!(matches!("quadratic".parse::<TestFunctional>(), Err(Error::UnsupportedFunctional(_))));
        let g = TimeGrid::uniform(0.0, 0.1, 3, 1).unwrap();
        let two = KernelPair::white(DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap();
        assert!(furutsu_novikov_residual(&two, &g, TestFunctional::Linear, 10, 0).is_err());
    }
}
