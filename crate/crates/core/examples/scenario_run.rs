// A scenario written inline, run end to end: artifacts land in a
// temporary directory and the report is printed.
//
// `cargo run --release --example scenario_run`

use std::path::Path;

use sselab::cli::{parse_scenario_str, run_scenario, RunOptions};

const SCENARIO: &str = r#"
name = "driven_dephasing"
description = "Driven qubit, H = sigma_x / 2, L = sigma_z, against the master equation."

[system]
hamiltonian = [[0, 0.5], [0.5, 0]]
couplings = [[[1, 0], [0, -1]]]

[grid]
dt = 2e-3
t_final = 1.0
stride = 100

[ensemble]
trajectories = 500
seed = 12

[[runs]]
name = "lindblad"
equation = "lindblad_reference"

[[runs]]
name = "circular"
equation = "linear_white"
reference = "lindblad"

[[runs]]
name = "nonlinear"
equation = "nonlinear_white"
reference = "lindblad"

[[comparisons]]
kind = "agreement"
run = "circular"
other = "lindblad"

[[comparisons]]
kind = "agreement"
run = "nonlinear"
other = "lindblad"
"#;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = parse_scenario_str(SCENARIO, Path::new("."))?;
    let out = std::env::temp_dir().join("sselab_example_scenario_run");
    let report = run_scenario(&cfg, &RunOptions { out_dir: Some(out.clone()), ..RunOptions::default() })?;
    print!("{}", report.to_text());
    println!("artifacts in {}", out.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
