//! Scenario-driven front end: declarative scenario files, execution with
//! CSV and report artifacts, the fast selfcheck suite, and file comparison.

mod compare;
mod config;
mod run;
mod selfcheck;

pub use compare::{compare_results, FileComparison};
pub use config::{
    parse_scenario, parse_scenario_str, ComparisonConfig, ComparisonKind, ConfigError, KernelPreset, RunConfig,
    RunKind, ScenarioConfig, Violation, COMPARISON_KINDS, DEFAULT_DT, DEFAULT_TRAJECTORIES, DRIFT_MODES, EQUATIONS,
    KERNEL_PRESETS, SYSTEM_PRESETS,
};
pub use run::{
    resolve_output_dir, run_scenario, ComparisonOutcome, RunOptions, RunSummary, ScenarioReport, DEFAULT_OUTPUT_ROOT,
    OUTPUT_ENV,
};
pub use selfcheck::{run_selfcheck, run_selfcheck_with, CheckItem, SelfcheckReport, Tamper};

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("white_equivalence", include_str!("../../scenarios/white_equivalence.toml")),
    ("localization_born", include_str!("../../scenarios/localization_born.toml")),
    ("imaginary_unitary", include_str!("../../scenarios/imaginary_unitary.toml")),
    ("ou_nonmarkovian", include_str!("../../scenarios/ou_nonmarkovian.toml")),
    ("rex_phase_scan", include_str!("../../scenarios/rex_phase_scan.toml")),
];

pub fn bundled_scenario(name: &str) -> Option<Result<ScenarioConfig, ConfigError>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| parse_scenario_str(src, std::path::Path::new(".")))
}

/// A scenario file path, or the name of a bundled scenario when no such file exists.
pub fn load_scenario(arg: &str) -> Result<ScenarioConfig, ConfigError> {
    let path = std::path::Path::new(arg);
    if !path.exists() {
        if let Some(cfg) = bundled_scenario(arg) {
            return cfg;
        }
    }
    parse_scenario(path)
}
