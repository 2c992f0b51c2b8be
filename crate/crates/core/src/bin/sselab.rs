use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sselab::cli::{compare_results, load_scenario, run_scenario, run_selfcheck, RunOptions};

/// Stochastic Schrödinger equation lab.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Master seed; overrides the scenario's ensemble.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trajectories per stochastic run; overrides ensemble.trajectories.
    #[arg(long, global = true)]
    trajectories: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides output.dir and $SSELAB_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or a bundled scenario by name.
    Run { config: String },
    /// Fast internal consistency checks.
    Selfcheck,
    /// Trace distance between two result CSVs at every checkpoint.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        tol: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match cli.command {
        Command::Run { config } => {
            let cfg = match load_scenario(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(2);
                }
            };
            let opts = RunOptions { seed: cli.seed, trajectories: cli.trajectories, out_dir: cli.out };
            match run_scenario(&cfg, &opts) {
                Ok(report) => {
                    print!("{}", report.to_text());
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Selfcheck => {
            let report = run_selfcheck();
            print!("{report}");
            if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Command::Compare { a, b, tol } => match compare_results(&a, &b, tol) {
            Ok(c) => {
                for (t, d) in c.times.iter().zip(&c.distances) {
                    println!("t = {t:.6}  D = {d:.6e}");
                }
                println!(
                    "{} max D = {:.6e} (tol {:.3e})",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.max_distance,
                    c.tolerance
                );
                if c.pass {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
