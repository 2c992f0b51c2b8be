// Empirical covariance `a` and pseudo-covariance `b` of sampled paths
// against their targets, and rejection of an unrealizable kernel pair.
//
// `cargo run --release --example noise_fidelity`

use nalgebra::DMatrix;
use sselab::error::Result;
use sselab::hilbert::C64;
use sselab::noise::{empirical_covariance, KernelPair, NoiseSampler, TimeGrid};

pub fn run() -> Result<()> {
    let grid = TimeGrid::uniform(0.0, 0.1, 4, 1)?;
    let beta = C64::from_polar(0.6, 0.7);
    let k = KernelPair::general_ou(1, 2.0, beta);
    let sampler = NoiseSampler::new(&k, &grid)?;
    let paths: Vec<_> = (0..20_000).map(|r| sampler.sample(1, r)).collect();
    let emp = empirical_covariance(&paths)?;
    println!("{:>4} {:>4} {:>22} {:>10} {:>22} {:>22}", "k", "l", "a", "target", "b", "target");
    for kk in 0..grid.len() {
        for ll in kk..grid.len() {
            let (t, s) = (grid.time(kk), grid.time(ll));
            println!(
                "{kk:>4} {ll:>4} {:>22.4} {:>10.4} {:>22.4} {:>22.4}",
                emp.a(0, 0, kk, ll),
                k.a(0, 0, t, s).re,
                emp.b(0, 0, kk, ll),
                k.b(0, 0, t, s)
            );
        }
    }
    let invalid = KernelPair::white(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, C64::new(0.5, 0.0)))?;
    match NoiseSampler::new(&invalid, &grid) {
        Err(e) => println!("a = 0, b = 0.5 rejected: {e}"),
        Ok(_) => println!("a = 0, b = 0.5 unexpectedly accepted"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run()
}
