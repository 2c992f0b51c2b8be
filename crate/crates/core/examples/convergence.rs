// Strong self-convergence of each integrator under step halving on shared
// noise.
//
// `cargo run --release --example convergence`

use sselab::dynamics::{DriftMode, Equation, OperatorSet, Propagator, Scheme};
use sselab::error::Result;
use sselab::hilbert::{Operator, StateVector, C64};
use sselab::noise::{KernelPair, TimeGrid};

pub fn run() -> Result<()> {
    let driven = OperatorSet::new(Operator::pauli_x().scale(C64::new(0.5, 0.0)), vec![Operator::pauli_z()])?;
    let grid = TimeGrid::uniform(0.0, 0.02, 50, 50)?;
    let psi0 = StateVector::uniform(2);
    let cases = [
        (Equation::LinearWhite, Scheme::Rk4, KernelPair::circular_white(1), &driven),
        (Equation::LinearWhite, Scheme::Heun, KernelPair::circular_white(1), &driven),
        (Equation::NonlinearWhite, Scheme::Rk4, KernelPair::circular_white(1), &driven),
        (Equation::GuidedWhite, Scheme::Rk4, KernelPair::real_white(1), &driven),
    ];
    for (eq, scheme, k, ops) in cases {
        let p = Propagator::new(eq, ops, &k, DriftMode::GeneralFromKernel, &grid, scheme)?;
        let rep = p.self_convergence(&psi0, 2000, 1)?;
        println!("{:<18} {scheme:?}: errors {:.3e} {:.3e}, order {:.2}", eq.name(), rep.errors[0], rep.errors[1], rep.order);
    }
    let colored = Propagator::new(
        Equation::ColoredCommuting,
        &OperatorSet::qubit_sigma_z(),
        &KernelPair::real_ou(1, 2.0),
        DriftMode::GeneralFromKernel,
        &grid,
        Scheme::Rk4,
    )?;
    let rep = colored.self_convergence(&psi0, 2000, 1)?;
    println!("colored_commuting  Rk4: errors {:.3e} {:.3e}, order {:.2}", rep.errors[0], rep.errors[1], rep.order);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
