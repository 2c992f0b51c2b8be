// Mean squared norm of linear trajectories stays at one with the drift
// built from the kernel; the drift `−L²` with circular noise is flagged.
//
// `cargo run --release --example norm_conservation`

use sselab::dynamics::{DriftMode, Equation, OperatorSet, Propagator, Scheme};
use sselab::ensemble::{norm_average_check, run_ensemble};
use sselab::error::Result;
use sselab::hilbert::{Operator, StateVector, C64};
use sselab::noise::{KernelPair, TimeGrid};

pub fn run() -> Result<()> {
    let ops = OperatorSet::qubit_sigma_z();
    let grid = TimeGrid::spanning(0.0, 1.0, 1e-3, 200)?;
    let psi0 = StateVector::uniform(2);
    let k = KernelPair::circular_white(1);
    let good = Propagator::new(Equation::LinearWhite, &ops, &k, DriftMode::GeneralFromKernel, &grid, Scheme::Rk4)?;
    let wrong = good.clone().with_drift(Operator::identity(2).scale(C64::new(-1.0, 0.0)))?;
    for (label, p) in [("general drift", &good), ("drift -L^2", &wrong)] {
        let check = norm_average_check(&run_ensemble(p, &psi0, 1000, 8)?);
        println!("{label}: flagged {}, max |<norm^2> - 1| = {:.3e}", check.any_flagged(), check.max_abs_deviation);
        for (d, se) in check.deviation.iter().zip(&check.std_error) {
            println!("    {d:>+.4e} +- {se:.1e}");
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
