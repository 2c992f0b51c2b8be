// Gaussian integration by parts on OU paths for a linear and an
// exponential functional.
//
// `cargo run --release --example furutsu_novikov`

use sselab::error::Result;
use sselab::noise::{furutsu_novikov_residual, KernelPair, TestFunctional, TimeGrid};

pub fn run() -> Result<()> {
    let grid = TimeGrid::uniform(0.0, 0.05, 20, 20)?;
    let k = KernelPair::real_ou(1, 2.0);
    for f in [TestFunctional::Linear, TestFunctional::Exponential] {
        let r = furutsu_novikov_residual(&k, &grid, f, 20_000, 4)?;
        println!(
            "{f:?}: <x F> = {:.4}, int C <dF> = {:.4}, relative residual {:.2e} +- {:.2e}",
            r.lhs, r.rhs, r.residual, r.std_error
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
