// Imaginary white noise makes every trajectory unitary: norms stay at one
// and `Var(σz)` never decays.
//
// `cargo run --release --example imaginary_unitary`

use sselab::dynamics::{DriftMode, Equation, OperatorSet, Propagator, Scheme};
use sselab::error::Result;
use sselab::hilbert::{Operator, StateVector};
use sselab::noise::{KernelPair, TimeGrid};

pub fn run() -> Result<()> {
    let ops = OperatorSet::qubit_sigma_z();
    let k = KernelPair::imaginary_white(1);
    let psi0 = StateVector::uniform(2);
    let z = Operator::pauli_z();
    for dt in [4e-3, 2e-3, 1e-3] {
        let grid = TimeGrid::spanning(0.0, 1.0, dt, 1)?;
        let p = Propagator::new(Equation::LinearWhite, &ops, &k, DriftMode::GeneralFromKernel, &grid, Scheme::Rk4)?;
        let mut worst: f64 = 0.0;
        let mut var = 0.0;
        for r in 0..100 {
            let rec = p.run(&psi0, 3, r)?;
            worst = rec.sq_norms.iter().map(|n| (n.sqrt() - 1.0).abs()).fold(worst, f64::max);
            let phi = rec.final_state().normalized();
            var += 1.0 - phi.expectation(&z).re.powi(2);
        }
        println!("dt = {dt:.0e}: max |norm - 1| = {worst:.2e}, mean Var(sigma_z) at t = 1: {:.4}", var / 100.0);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
