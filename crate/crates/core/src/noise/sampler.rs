use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::kernel::{augmented_covariance_unchecked, validate_kernel, DEFAULT_KERNEL_TOL};
use super::{KernelPair, NoiseKind, NoisePath, TimeGrid};
use crate::error::{Error, Result};
use crate::hilbert::C64;

/// Eigenvalues below `-JITTER_RTOL · max diagonal` abort the factorization;
/// eigenvalues within that distance of zero are roundoff and dropped.
const JITTER_RTOL: f64 = 1e-10;

/// Independent random stream for `(seed, stream)`. ChaCha's 64-bit stream
/// id selects a disjoint keystream, so stream `k` draws the same numbers no
/// matter which worker produces it or in what order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Square-root factor `S` with `S Sᵀ = C`, keeping only directions with
/// eigenvalue above the jitter.
fn spectral_factor(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let max_diag = c.diagonal().iter().copied().fold(0.0, f64::max);
    let eig = c.clone().symmetric_eigen();
    let jitter = JITTER_RTOL * max_diag;
    let mut cols = Vec::new();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -jitter {
            return Err(Error::NotPositiveSemidefinite { min_eigenvalue: lambda, threshold: -jitter });
        }
        if lambda > jitter {
            cols.push(eig.eigenvectors.column(k) * lambda.sqrt());
        }
    }
    if cols.is_empty() {
        return Ok(DMatrix::zeros(c.nrows(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

#[derive(Debug, Clone)]
enum Factor {
    /// Per-unit-time factor of the `2n × 2n` increment covariance.
    White(DMatrix<f64>),
    /// Factor of the full augmented covariance on the grid.
    Full(DMatrix<f64>),
}

/// Samples noise paths for one kernel on one grid. The factorization is
/// computed once; sampling is then a pure function of `(seed, index)`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    kernel: KernelPair,
    grid: TimeGrid,
    factor: Factor,
}

impl NoiseSampler {
    pub fn new(kernel: &KernelPair, grid: &TimeGrid) -> Result<Self> {
        validate_kernel(kernel, grid, DEFAULT_KERNEL_TOL)?;
        let factor = match kernel.kind() {
            NoiseKind::White => Factor::White(spectral_factor(&kernel.white_block())?),
            NoiseKind::Smooth | NoiseKind::Mixed => {
                Factor::Full(spectral_factor(&augmented_covariance_unchecked(kernel, grid, 1.0)?)?)
            }
        };
        Ok(Self { kernel: kernel.clone(), grid: grid.clone(), factor })
    }

    /// Sampler with a tampered x–y cross-block sign, for negative controls only.
    pub(crate) fn with_cross_sign(kernel: &KernelPair, grid: &TimeGrid, cross_sign: f64) -> Result<Self> {
        let n = kernel.n_channels();
        let factor = match kernel.kind() {
            NoiseKind::White => {
                let mut block = kernel.white_block();
                for i in 0..n {
                    for j in 0..n {
                        block[(i, n + j)] *= cross_sign;
                        block[(n + i, j)] *= cross_sign;
                    }
                }
                Factor::White(spectral_factor(&block)?)
            }
            _ => Factor::Full(spectral_factor(&augmented_covariance_unchecked(kernel, grid, cross_sign)?)?),
        };
        Ok(Self { kernel: kernel.clone(), grid: grid.clone(), factor })
    }

    pub fn kernel(&self) -> &KernelPair {
        &self.kernel
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn draw(rng: &mut ChaCha20Rng, rank: usize) -> DVector<f64> {
        DVector::from_iterator(rank, (0..rank).map(|_| rng.sample::<f64, _>(StandardNormal)))
    }

    pub fn sample(&self, seed: u64, trajectory_index: u64) -> NoisePath {
        let mut rng = stream_rng(seed, trajectory_index);
        let n = self.kernel.n_channels();
        let m = self.grid.len();
        let mut path = NoisePath::zeros(&self.grid, n, self.kernel.kind());
        match &self.factor {
            Factor::White(block) => {
                let scale = 1.0 / self.grid.dt.sqrt();
                for k in 0..m {
                    let v = block * Self::draw(&mut rng, block.ncols()) * scale;
                    for i in 0..n {
                        path.values[(i, k)] = C64::new(v[i], v[n + i]);
                    }
                }
            }
            Factor::Full(full) => {
                let v = full * Self::draw(&mut rng, full.ncols());
                for i in 0..n {
                    for k in 0..m {
                        path.values[(i, k)] = C64::new(v[i * m + k], v[n * m + i * m + k]);
                    }
                }
            }
        }
        path
    }

    /// Brownian-bridge refinement of a white path to half the step: the two
    /// half-step increments are drawn conditionally on summing to the coarse
    /// increment. Returns a sampler for the refined grid alongside the path.
    pub fn refine(&self, path: &NoisePath, seed: u64, stream: u64) -> Result<(NoiseSampler, NoisePath)> {
        let block = match &self.factor {
            Factor::White(b) => b,
            Factor::Full(_) => {
                return Err(Error::UnsupportedKernel(
                    "bridge refinement applies to white noise; sample smooth paths on the fine grid".into(),
                ))
            }
        };
        if !path.grid.same_times(&self.grid) || path.n_channels() != self.kernel.n_channels() {
            return Err(Error::GridMismatch("path was not drawn on this sampler's grid".into()));
        }
        let fine_grid = self.grid.halved();
        let n = self.kernel.n_channels();
        let mut rng = stream_rng(seed, stream);
        let mut fine = NoisePath::zeros(&fine_grid, n, path.kind);
        // z_a = z + η, z_b = z − η with η ~ N(0, Σ/dt_coarse) keeps
        // (z_a + z_b)·dt_fine equal to the coarse increment.
        let coarse_scale = 1.0 / self.grid.dt.sqrt();
        for k in 0..self.grid.n_steps {
            let eta = block * Self::draw(&mut rng, block.ncols()) * coarse_scale;
            for i in 0..n {
                let e = C64::new(eta[i], eta[n + i]);
                fine.values[(i, 2 * k)] = path.values[(i, k)] + e;
                fine.values[(i, 2 * k + 1)] = path.values[(i, k)] - e;
            }
        }
        let last = block * Self::draw(&mut rng, block.ncols()) * (1.0 / fine_grid.dt.sqrt());
        for i in 0..n {
            fine.values[(i, fine_grid.n_steps)] = C64::new(last[i], last[n + i]);
        }
        let sampler = NoiseSampler { kernel: self.kernel.clone(), grid: fine_grid, factor: self.factor.clone() };
        Ok((sampler, fine))
    }
}

/// Validates `k` and draws trajectory `trajectory_index` of stream `rng_seed`.
/// Building a [`NoiseSampler`] once is cheaper when drawing many paths.
pub fn sample_noise(k: &KernelPair, grid: &TimeGrid, rng_seed: u64, trajectory_index: u64) -> Result<NoisePath> {
    Ok(NoiseSampler::new(k, grid)?.sample(rng_seed, trajectory_index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let g = TimeGrid::uniform(0.0, 0.1, 10, 1).unwrap();
        let k = KernelPair::general_ou(1, 1.0, C64::new(0.2, 0.3));
        let s = NoiseSampler::new(&k, &g).unwrap();
        assert_eq!(s.sample(7, 3), s.sample(7, 3));
        assert_ne!(s.sample(7, 3), s.sample(7, 4));
        assert_ne!(s.sample(7, 3), s.sample(8, 3));
        assert_eq!(sample_noise(&k, &g, 7, 3).unwrap(), s.sample(7, 3));
    }

    #[test]
    fn rotated_real_white_lies_on_a_line() {
        let phi = 0.7;
        let g = TimeGrid::uniform(0.0, 0.01, 50, 1).unwrap();
        let s = NoiseSampler::new(&KernelPair::rotated_real_white(1, phi), &g).unwrap();
        let rot = C64::from_polar(1.0, -phi);
        for idx in 0..5 {
            let p = s.sample(1, idx);
            for z in p.values.iter() {
                assert!((rot * z).im.abs() < 1e-12 * z.norm().max(1.0));
            }
        }
    }

    #[test]
    fn tampered_cross_sign_breaks_realness() {
        let phi = std::f64::consts::FRAC_PI_3;
        let g = TimeGrid::uniform(0.0, 0.01, 20, 1).unwrap();
        let s = NoiseSampler::with_cross_sign(&KernelPair::rotated_real_white(1, phi), &g, -1.0).unwrap();
        let rot = C64::from_polar(1.0, -phi);
        let worst = (0..5)
            .flat_map(|i| s.sample(1, i).values.iter().map(|z| (rot * z).im.abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        assert!(worst > 1.0);
    }

    #[test]
    fn bridge_refinement_preserves_coarse_increments() {
        let g = TimeGrid::uniform(0.0, 0.1, 8, 2).unwrap();
        let s = NoiseSampler::new(&KernelPair::circular_white(2), &g).unwrap();
        let coarse = s.sample(5, 0);
        let (fine_sampler, fine) = s.refine(&coarse, 99, 0).unwrap();
        assert_eq!(fine.grid.n_steps, 16);
        assert_eq!(fine.grid.checkpoints, vec![0, 4, 8, 12, 16]);
        for i in 0..2 {
            for k in 0..8 {
                let coarse_inc = coarse.value(i, k) * 0.1;
                let fine_inc = (fine.value(i, 2 * k) + fine.value(i, 2 * k + 1)) * 0.05;
                assert!((coarse_inc - fine_inc).norm() < 1e-14);
            }
        }
        assert!(fine_sampler.refine(&fine, 99, 1).is_ok());
        assert!(fine_sampler.refine(&coarse, 99, 1).is_err());
    }

    #[test]
    fn smooth_paths_cannot_be_bridge_refined() {
        let g = TimeGrid::uniform(0.0, 0.1, 8, 1).unwrap();
        let s = NoiseSampler::new(&KernelPair::real_ou(1, 1.0), &g).unwrap();
        let p = s.sample(0, 0);
        assert!(s.refine(&p, 0, 0).is_err());
        assert!(p.subsampled(2).is_ok());
        assert!(p.subsampled(3).is_err());
    }

    #[test]
    fn invalid_kernel_propagates() {
        let g = TimeGrid::uniform(0.0, 0.1, 4, 1).unwrap();
        let k = KernelPair::white(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(NoiseSampler::new(&k, &g), Err(Error::NotPositiveSemidefinite { .. })));
    }
}
