// Real white noise localizes trajectories in eigenstates of `σz`. Sampling
// under the physical measure reproduces Born-rule outcome frequencies.
//
// `cargo run --release --example localization_born`

use sselab::dynamics::{DriftMode, Equation, OperatorSet, Propagator, Scheme};
use sselab::ensemble::{localization_stats, run_ensemble};
use sselab::error::Result;
use sselab::hilbert::{joint_eigenmanifolds, StateVector, C64};
use sselab::noise::{KernelPair, TimeGrid};

pub fn run() -> Result<()> {
    let ops = OperatorSet::qubit_sigma_z();
    let grid = TimeGrid::spanning(0.0, 3.0, 2e-3, 500)?;
    let p = Propagator::new(Equation::GuidedWhite, &ops, &KernelPair::real_white(1), DriftMode::GeneralFromKernel, &grid, Scheme::Rk4)?;
    let eig = joint_eigenmanifolds(ops.couplings(), 1e-9)?;
    let psi0 = StateVector::from_slice(&[C64::new(0.5, 0.0), C64::new(0.75f64.sqrt(), 0.0)])?;
    let acc = run_ensemble(&p, &psi0, 1000, 11)?;
    let stats = localization_stats(&acc, &ops, &eig)?;
    println!("Born weights {:?}", eig.weights(&psi0));
    for ((ev, f), se) in eig.eigenvalues.iter().zip(&stats.outcome_frequencies).zip(&stats.outcome_std_errors) {
        println!("sigma_z = {:+}: frequency {f:.3} +- {se:.3}", ev[0]);
    }
    for (t, v) in acc.times().iter().zip(&stats.mean_variance) {
        println!("t = {t:.1}  mean Var(sigma_z) = {:.3e}", v.value.re);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
