// Rotated-real noise `e^{iφ} x` with `L = |0⟩⟨0|`: the drift built from the
// kernel against the literal `−cos²φ L²` drift. The literal drift
// reproduces the master equation only after shifting `H` by `−½ sin 2φ L²`.
//
// `cargo run --release --example rex_phase_scan`

use std::f64::consts::PI;

use sselab::dynamics::{lindblad_evolve, DriftMode, Equation, OperatorSet, Propagator, Scheme};
use sselab::ensemble::run_ensemble;
use sselab::error::Result;
use sselab::hilbert::{outer_product, trace_distance, Operator, StateVector};
use sselab::noise::{KernelPair, TimeGrid};

pub fn run() -> Result<()> {
    let l = Operator::diagonal(&[1.0, 0.0]);
    let ops = OperatorSet::new(Operator::zeros(2), vec![l.clone()])?;
    let grid = TimeGrid::spanning(0.0, 1.0, 2e-3, 100)?;
    let psi0 = StateVector::uniform(2);
    let rho0 = outer_product(&psi0);
    let plain = lindblad_evolve(&rho0, &ops, &grid)?;
    let max_d = |rhos: &[sselab::hilbert::DensityMatrix], reference: &[sselab::hilbert::DensityMatrix]| -> Result<f64> {
        let mut m: f64 = 0.0;
        for (a, b) in rhos.iter().zip(reference) {
            m = m.max(trace_distance(a, b)?);
        }
        Ok(m)
    };
    println!("{:>6} {:>14} {:>14} {:>14} {:>14}", "phi/pi", "general|H", "general|H'", "literal|H", "literal|H'");
    for phi in [0.0, PI / 8.0, PI / 4.0, 3.0 * PI / 8.0, PI / 2.0] {
        let shift = l.scale((-0.5 * (2.0 * phi).sin()).into());
        let shifted = lindblad_evolve(&rho0, &ops.with_hamiltonian(shift)?, &grid)?;
        let k = KernelPair::rotated_real_white(1, phi);
        let mut row = Vec::new();
        for mode in [DriftMode::GeneralFromKernel, DriftMode::LiteralRex { phi }] {
            let p = Propagator::new(Equation::LinearWhite, &ops, &k, mode, &grid, Scheme::Rk4)?;
            let acc = run_ensemble(&p, &psi0, 1000, 2)?;
            let rhos: Vec<_> = (0..acc.times().len()).map(|k| acc.raw_rho(k)).collect();
            row.push(max_d(&rhos, &plain)?);
            row.push(max_d(&rhos, &shifted)?);
        }
        println!("{:>6.3} {:>14.4} {:>14.4} {:>14.4} {:>14.4}", phi / PI, row[0], row[1], row[2], row[3]);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
