//! Multichannel complex Gaussian noise with prescribed covariance and
//! pseudo-covariance kernels: definition, validation, sampling, and
//! empirical verification.

mod estimate;
mod kernel;
mod sampler;

use nalgebra::DMatrix;

pub use estimate::{
    empirical_covariance, furutsu_novikov_residual, EmpiricalCovariance, FunctionalResidual,
    TestFunctional,
};
pub use kernel::{
    augmented_covariance, validate_kernel, ExponentialKernel, KernelPair, NoiseKind, SmoothKernel,
    TabulatedKernel, DEFAULT_KERNEL_TOL, MAX_AUGMENTED_SIZE,
};
pub use sampler::{sample_noise, stream_rng, NoiseSampler};

use crate::error::{Error, Result};
use crate::hilbert::C64;

/// Uniform time grid `t_k = t0 + k·dt`, `k = 0..=n_steps`, with the indices
/// at which trajectories are recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub checkpoints: Vec<usize>,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize, mut checkpoints: Vec<usize>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidInput(format!("time grid needs finite t0 and dt > 0, got dt = {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidInput("time grid needs at least one step".into()));
        }
        checkpoints.sort_unstable();
        checkpoints.dedup();
        if checkpoints.last().is_some_and(|&c| c > n_steps) {
            return Err(Error::InvalidInput("checkpoint beyond the last grid index".into()));
        }
        Ok(Self { t0, dt, n_steps, checkpoints })
    }

    /// Checkpoints every `stride` steps, always including the first and last index.
    pub fn uniform(t0: f64, dt: f64, n_steps: usize, stride: usize) -> Result<Self> {
        let stride = stride.max(1);
        let mut checkpoints: Vec<usize> = (0..=n_steps).step_by(stride).collect();
        if checkpoints.last() != Some(&n_steps) {
            checkpoints.push(n_steps);
        }
        Self::new(t0, dt, n_steps, checkpoints)
    }

    /// Grid covering `[t0, t_final]` with step `dt` (rounded to a whole number of steps).
    pub fn spanning(t0: f64, t_final: f64, dt: f64, stride: usize) -> Result<Self> {
        let steps = ((t_final - t0) / dt).round();
        if !(steps >= 1.0) {
            return Err(Error::InvalidInput(format!("empty time span [{t0}, {t_final}] at dt = {dt}")));
        }
        Self::uniform(t0, dt, steps as usize, stride)
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn checkpoint_times(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|&k| self.time(k)).collect()
    }

    /// Same span at half the step; checkpoints keep their times.
    pub fn halved(&self) -> Self {
        Self {
            t0: self.t0,
            dt: 0.5 * self.dt,
            n_steps: 2 * self.n_steps,
            checkpoints: self.checkpoints.iter().map(|&k| 2 * k).collect(),
        }
    }

    /// Every `factor`-th point of this grid; checkpoints off the coarse grid are dropped.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::GridMismatch(format!("grid of {} steps cannot be coarsened by {factor}", self.n_steps)));
        }
        Ok(Self {
            t0: self.t0,
            dt: self.dt * factor as f64,
            n_steps: self.n_steps / factor,
            checkpoints: self.checkpoints.iter().filter(|&&k| k % factor == 0).map(|&k| k / factor).collect(),
        })
    }

    pub(crate) fn same_times(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps
            && (self.t0 - other.t0).abs() <= 1e-12 * self.dt
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

/// One realization `z_i(t_k)` of the noise on a grid.
///
/// For white kernels, value `k` is the step average `ΔZ_k / dt` over
/// `[t_k, t_{k+1})`, so its variance scales as `1/dt`; the final value is
/// drawn for uniformity but no integrator consumes it. For smooth kernels
/// the values are point samples of the process.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: TimeGrid,
    pub kind: NoiseKind,
    /// `n_channels × (n_steps + 1)`.
    pub values: DMatrix<C64>,
}

impl NoisePath {
    pub fn zeros(grid: &TimeGrid, n_channels: usize, kind: NoiseKind) -> Self {
        Self { grid: grid.clone(), kind, values: DMatrix::zeros(n_channels, grid.len()) }
    }

    pub fn n_channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn value(&self, channel: usize, k: usize) -> C64 {
        self.values[(channel, k)]
    }

    /// Point samples at every `factor`-th grid index; only meaningful for smooth paths.
    pub fn subsampled(&self, factor: usize) -> Result<Self> {
        if self.kind != NoiseKind::Smooth {
            return Err(Error::UnsupportedKernel(
                "subsampling applies to smooth paths; refine white paths instead".into(),
            ));
        }
        let grid = self.grid.coarsened(factor)?;
        let values = DMatrix::from_fn(self.n_channels(), grid.len(), |i, k| self.values[(i, k * factor)]);
        Ok(Self { grid, kind: self.kind, values })
    }
}
