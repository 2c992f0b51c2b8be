// Ornstein-Uhlenbeck noise on a dephasing qubit: real and imaginary colored
// noise with the memory drift against the Gaussian closed form.
//
// `cargo run --release --example ou_nonmarkovian`

use sselab::dynamics::{DriftMode, Equation, OperatorSet, Propagator, Scheme};
use sselab::ensemble::run_ensemble;
use sselab::error::Result;
use sselab::hilbert::StateVector;
use sselab::noise::{KernelPair, TimeGrid};

pub fn run() -> Result<()> {
    let gamma = 2.0;
    let ops = OperatorSet::qubit_sigma_z();
    let grid = TimeGrid::spanning(0.0, 2.0, 1e-2, 25)?;
    let psi0 = StateVector::uniform(2);
    let closed = |t: f64| 0.5 * (-2.0 * (t - (1.0 - (-gamma * t).exp()) / gamma)).exp();
    let mut ens = Vec::new();
    for k in [KernelPair::real_ou(1, gamma), KernelPair::imaginary_ou(1, gamma)] {
        let p = Propagator::new(Equation::ColoredCommuting, &ops, &k, DriftMode::GeneralFromKernel, &grid, Scheme::Rk4)?;
        ens.push(run_ensemble(&p, &psi0, 1000, 5)?);
    }
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "t", "closed", "real OU", "imag OU", "Markov");
    for (k, &t) in ens[0].times().iter().enumerate() {
        println!(
            "{t:>6.2} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            closed(t),
            ens[0].raw_rho(k).entry(0, 1).norm(),
            ens[1].raw_rho(k).entry(0, 1).norm(),
            0.5 * (-2.0 * t).exp()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
