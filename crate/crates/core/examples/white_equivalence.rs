// Qubit dephasing unraveled four ways: linear equations with circular, real
// and imaginary white noise, and the nonlinear equation, each compared with
// the master equation.
//
// `cargo run --release --example white_equivalence`

use sselab::dynamics::{lindblad_evolve, DriftMode, Equation, OperatorSet, Propagator, Scheme};
use sselab::ensemble::{bootstrap, run_ensemble, Measure};
use sselab::error::Result;
use sselab::hilbert::{outer_product, trace_distance, StateVector};
use sselab::noise::{KernelPair, TimeGrid};

pub fn run() -> Result<()> {
    let ops = OperatorSet::qubit_sigma_z();
    let grid = TimeGrid::spanning(0.0, 1.0, 1e-3, 250)?;
    let psi0 = StateVector::uniform(2);
    let reference = lindblad_evolve(&outer_product(&psi0), &ops, &grid)?;
    let cases = [
        ("linear, circular", Equation::LinearWhite, KernelPair::circular_white(1)),
        ("linear, real", Equation::LinearWhite, KernelPair::real_white(1)),
        ("linear, imaginary", Equation::LinearWhite, KernelPair::imaginary_white(1)),
        ("nonlinear, circular", Equation::NonlinearWhite, KernelPair::circular_white(1)),
    ];
    println!("{:<22} {:>8} {:>10} {:>10}", "unraveling", "t", "D", "boot se");
    for (label, eq, k) in cases {
        let p = Propagator::new(eq, &ops, &k, DriftMode::GeneralFromKernel, &grid, Scheme::Rk4)?;
        let acc = run_ensemble(&p, &psi0, 500, 7)?;
        let boot = bootstrap(&acc, Measure::Raw, 100, 7)?;
        for (k, t) in acc.times().iter().enumerate().skip(1) {
            let d = trace_distance(&boot.point[k], &reference[k])?;
            println!("{label:<22} {t:>8.3} {d:>10.4} {:>10.4}", boot.trace_distance_se(k));
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
