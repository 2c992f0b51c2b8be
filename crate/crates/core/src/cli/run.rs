use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{ComparisonConfig, ComparisonKind, RunConfig, RunKind, ScenarioConfig};
use crate::dynamics::{analytic_commuting_rho, lindblad_evolve_with_rates, Propagator};
use crate::ensemble::{
    bootstrap, compare_to_reference, localization_stats, norm_average_check, run_ensemble, write_ensemble_csv,
    write_reference_csv, Bootstrap, EnsembleAccumulator, Measure,
};
use crate::error::{Error, Result};
use crate::hilbert::{joint_eigenmanifolds, outer_product, trace_distance, DensityMatrix};

/// Environment variable naming the default output root.
pub const OUTPUT_ENV: &str = "SSELAB_OUT";

/// Output root used when neither `--out` nor the environment variable is set.
pub const DEFAULT_OUTPUT_ROOT: &str = "sselab_out";

const EIGEN_TOL: f64 = 1e-10;
/// Distances this small are rounding noise, not disagreement.
const ROUNDING_FLOOR: f64 = 1e-12;

/// Command-line overrides for one scenario run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub trajectories: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

/// `--out`, else the scenario's `output.dir`, else `$SSELAB_OUT/<name>`,
/// else `sselab_out/<name>`.
pub fn resolve_output_dir(cfg: &ScenarioConfig, opts: &RunOptions) -> PathBuf {
    if let Some(d) = &opts.out_dir {
        return d.clone();
    }
    if let Some(d) = &cfg.output_dir {
        return d.clone();
    }
    let root = std::env::var_os(OUTPUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT), PathBuf::from);
    root.join(&cfg.name)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub equation: String,
    pub kernel: String,
    pub drift: String,
    pub scheme: String,
    pub measure: String,
    pub seed: Option<u64>,
    pub trajectories: usize,
    pub hamiltonian_shift_l2: f64,
    /// Final-time mean squared norm, for stochastic runs.
    pub final_mean_sq_norm: Option<f64>,
    pub artifact: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ComparisonOutcome {
    pub name: String,
    pub kind: String,
    pub run: String,
    pub partner: Option<String>,
    pub required: bool,
    pub pass: bool,
    /// Statistic the verdict is based on.
    pub value: f64,
    pub criterion: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ScenarioReport {
    pub scenario: String,
    pub description: String,
    pub seed: u64,
    pub trajectories: usize,
    pub pass: bool,
    pub runs: Vec<RunSummary>,
    pub comparisons: Vec<ComparisonOutcome>,
    pub output_dir: String,
}

impl ScenarioReport {
    pub fn exit_code(&self) -> i32 {
        if self.pass { 0 } else { 1 }
    }

    pub fn comparison(&self, name: &str) -> Option<&ComparisonOutcome> {
        self.comparisons.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario: {}", self.scenario);
        if !self.description.is_empty() {
            let _ = writeln!(s, "{}", self.description);
        }
        let _ = writeln!(s, "seed: {}  trajectories: {}", self.seed, self.trajectories);
        let _ = writeln!(s, "\nruns:");
        for r in &self.runs {
            let _ = write!(
                s,
                "  {:<18} {:<20} kernel={} drift={} scheme={} measure={}",
                r.name, r.equation, r.kernel, r.drift, r.scheme, r.measure
            );
            if r.hamiltonian_shift_l2 != 0.0 {
                let _ = write!(s, " H_shift_L2={}", r.hamiltonian_shift_l2);
            }
            if let Some(n) = r.final_mean_sq_norm {
                let _ = write!(s, " final_mean_sq_norm={n:.6}");
            }
            let _ = writeln!(s);
        }
        let _ = writeln!(s, "\ncomparisons:");
        let width = self.comparisons.iter().map(|c| c.name.len()).max().unwrap_or(0);
        for c in &self.comparisons {
            let verdict = match (c.pass, c.required) {
                (true, _) => "PASS",
                (false, true) => "FAIL",
                (false, false) => "fail (informational)",
            };
            let _ = writeln!(s, "  {:<width$}  {:>12.6e}  [{}]  {}", c.name, c.value, c.criterion, verdict);
            if !c.detail.is_empty() {
                let _ = writeln!(s, "  {:<width$}    {}", "", c.detail);
            }
        }
        let _ = writeln!(s, "\nresult: {}", if self.pass { "PASS" } else { "FAIL" });
        s
    }
}

enum RunData {
    Ensemble { acc: EnsembleAccumulator, seed: u64 },
    Reference(Vec<DensityMatrix>),
}

/// Cached computations over the finished runs.
struct Results<'c> {
    cfg: &'c ScenarioConfig,
    data: BTreeMap<String, RunData>,
    boots: BTreeMap<(String, Measure), Bootstrap>,
}

fn run_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

fn bootstrap_seed(seed: u64) -> u64 {
    seed ^ 0xB007_5742_D1CE_0000
}

fn measure_name(m: Measure) -> &'static str {
    match m {
        Measure::Raw => "raw",
        Measure::Physical => "physical",
    }
}

impl<'c> Results<'c> {
    fn boot(&mut self, run: &str, measure: Measure) -> Result<&Bootstrap> {
        let key = (run.to_string(), measure);
        if !self.boots.contains_key(&key) {
            let Some(RunData::Ensemble { acc, seed }) = self.data.get(run) else {
                return Err(Error::InvalidInput(format!("'{run}' is not a stochastic run")));
            };
            let b = bootstrap(acc, measure, self.cfg.bootstrap_resamples, bootstrap_seed(*seed))?;
            self.boots.insert(key.clone(), b);
        }
        Ok(&self.boots[&key])
    }

    fn acc(&self, run: &str) -> Result<&EnsembleAccumulator> {
        match self.data.get(run) {
            Some(RunData::Ensemble { acc, .. }) => Ok(acc),
            _ => Err(Error::InvalidInput(format!("'{run}' is not a stochastic run"))),
        }
    }

    fn reference(&self, run: &str) -> Result<&[DensityMatrix]> {
        match self.data.get(run) {
            Some(RunData::Reference(r)) => Ok(r),
            _ => Err(Error::InvalidInput(format!("'{run}' is not a reference run"))),
        }
    }

    fn run_cfg(&self, run: &str) -> &RunConfig {
        self.cfg.run(run).expect("validated run name")
    }

    fn evaluate(&mut self, c: &ComparisonConfig) -> Result<ComparisonOutcome> {
        let times = self.cfg.grid.checkpoint_times();
        let mut out = ComparisonOutcome {
            name: c.name.clone(),
            kind: c.kind.name().into(),
            run: c.kind.run().into(),
            partner: c.kind.partner().map(String::from),
            required: c.required,
            pass: false,
            value: f64::NAN,
            criterion: c.kind.tolerance(),
            detail: String::new(),
        };
        match &c.kind {
            ComparisonKind::TraceDistance { run, reference, measure, tolerance }
            | ComparisonKind::Exceeds { run, reference, measure, tolerance } => {
                let reference = self.reference(reference)?.to_vec();
                let boot = self.boot(run, *measure)?;
                let bands: Vec<f64> = (0..times.len()).map(|k| boot.trace_distance_se(k)).collect();
                let cmp = compare_to_reference(&boot.point, &times, &bands, &reference, &times, *tolerance)?;
                let kmax = argmax(&cmp.distances);
                out.value = cmp.max_distance;
                out.pass = match c.kind {
                    ComparisonKind::Exceeds { .. } => cmp.max_distance > *tolerance,
                    _ => cmp.pass,
                };
                out.detail = format!(
                    "measure={} max at t={:.4} (bootstrap sigma {:.3e}); final distance {:.4e}",
                    measure_name(*measure),
                    times[kmax],
                    bands[kmax],
                    cmp.distances.last().copied().unwrap_or(0.0)
                );
            }
            ComparisonKind::Agreement { run, other, measure, sigmas } => {
                let a = self.boot(run, *measure)?.clone();
                let (b_point, b_se): (Vec<DensityMatrix>, Vec<f64>) = if self.run_cfg(other).kind.is_reference() {
                    (self.reference(other)?.to_vec(), vec![0.0; times.len()])
                } else {
                    let b = self.boot(other, *measure)?;
                    (b.point.clone(), (0..times.len()).map(|k| b.trace_distance_se(k)).collect())
                };
                let mut worst: f64 = 0.0;
                let mut pass = true;
                let mut max_d: f64 = 0.0;
                for k in 0..times.len() {
                    let d = trace_distance(&a.point[k], &b_point[k])?;
                    let scale = (a.trace_distance_se(k).powi(2) + b_se[k].powi(2)).sqrt();
                    max_d = max_d.max(d);
                    if d > sigmas * scale + ROUNDING_FLOOR {
                        pass = false;
                    }
                    if scale > 0.0 {
                        worst = worst.max(d / scale);
                    } else if d > ROUNDING_FLOOR {
                        worst = f64::INFINITY;
                    }
                }
                out.value = worst;
                out.pass = pass;
                out.detail = format!("measure={} max distance {:.4e}; value is the largest distance in sigma units", measure_name(*measure), max_d);
            }
            ComparisonKind::Coherence { run, reference, entry: (i, j), measure, sigmas, allowance } => {
                let reference = self.reference(reference)?.to_vec();
                let boot = self.boot(run, *measure)?;
                let (i, j) = (*i, *j);
                let mut worst: f64 = 0.0;
                let mut pass = true;
                let mut worst_sig: f64 = 0.0;
                for k in 0..times.len() {
                    let est = boot.point[k].entry(i, j).norm();
                    let exact = reference[k].entry(i, j).norm();
                    let se = boot.std_error_of(k, |r| r.entry(i, j).norm());
                    let diff = (est - exact).abs();
                    worst = worst.max(diff);
                    if se > 0.0 {
                        worst_sig = worst_sig.max(diff / se);
                    }
                    if diff > sigmas * se + allowance + ROUNDING_FLOOR {
                        pass = false;
                    }
                }
                out.value = worst;
                out.pass = pass;
                out.detail = format!(
                    "|rho_{i}{j}| measure={}; largest deviation {:.2} bootstrap sigma",
                    measure_name(*measure),
                    worst_sig
                );
            }
            ComparisonKind::NormAverage { run, expect_flagged } => {
                let check = norm_average_check(self.acc(run)?);
                out.value = check.max_sigmas();
                out.pass = check.any_flagged() == *expect_flagged;
                out.detail = format!(
                    "max |mean norm^2 - 1| = {:.3e}; {} of {} checkpoints flagged; value in standard errors",
                    check.max_abs_deviation,
                    check.flagged.iter().filter(|&&f| f).count(),
                    check.flagged.len()
                );
            }
            ComparisonKind::BornFrequencies { run, expected, sigmas } => {
                let rc = self.run_cfg(run).clone();
                let acc = self.acc(run)?;
                let eig = joint_eigenmanifolds(rc.ops.couplings(), EIGEN_TOL)?;
                let stats = localization_stats(acc, &rc.ops, &eig)?;
                let p = match expected {
                    Some(p) if p.len() == eig.len() => p.clone(),
                    Some(p) => {
                        return Err(Error::InvalidInput(format!(
                            "{}: {} expected frequencies for {} eigenmanifolds",
                            c.name,
                            p.len(),
                            eig.len()
                        )))
                    }
                    None => eig.weights(&rc.initial_state),
                };
                let n = acc.len() as f64;
                let mut worst: f64 = 0.0;
                let mut pass = true;
                for (f, p) in stats.outcome_frequencies.iter().zip(&p) {
                    let sigma = (p * (1.0 - p) / n).sqrt();
                    let d = (f - p).abs();
                    if d > sigmas * sigma + ROUNDING_FLOOR {
                        pass = false;
                    }
                    worst = worst.max(if sigma > 0.0 { d / sigma } else if d > ROUNDING_FLOOR { f64::INFINITY } else { 0.0 });
                }
                out.value = worst;
                out.pass = pass;
                out.detail = format!(
                    "frequencies {:?} vs Born weights {:?}; value in binomial sigma",
                    round4(&stats.outcome_frequencies),
                    round4(&p)
                );
            }
            ComparisonKind::VarianceBelow { run, threshold } => {
                let v = self.mean_variance(run)?;
                let last = *v.last().unwrap_or(&f64::NAN);
                out.value = last;
                out.pass = last < *threshold;
                out.detail = format!("initial mean Var(L) {:.4e}", v[0]);
            }
            ComparisonKind::VarianceRetained { run, fraction } => {
                let v = self.mean_variance(run)?;
                let last = *v.last().unwrap_or(&f64::NAN);
                out.value = last / v[0];
                out.pass = last >= fraction * v[0];
                out.detail = format!("mean Var(L) {:.4e} -> {:.4e}; value is the retained fraction", v[0], last);
            }
            ComparisonKind::UnitaryNorm { run, tolerance, until } => {
                let acc = self.acc(run)?;
                let mut worst: f64 = 0.0;
                for (k, &t) in times.iter().enumerate() {
                    if until.is_some_and(|u| t > u + 1e-12) {
                        continue;
                    }
                    for psi in acc.states_at(k) {
                        worst = worst.max((psi.norm_sqr().sqrt() - 1.0).abs());
                    }
                }
                out.value = worst;
                out.pass = worst < *tolerance;
                out.detail = format!("over {} trajectories", acc.len());
            }
        }
        Ok(out)
    }

    fn mean_variance(&self, run: &str) -> Result<Vec<f64>> {
        let rc = self.run_cfg(run);
        let eig = joint_eigenmanifolds(rc.ops.couplings(), EIGEN_TOL)?;
        let stats = localization_stats(self.acc(run)?, &rc.ops, &eig)?;
        Ok(stats.mean_variance.iter().map(|e| e.value.re).collect())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn reference_states(rc: &RunConfig, cfg: &ScenarioConfig) -> Result<Vec<DensityMatrix>> {
    let rho0 = outer_product(&rc.initial_state);
    match rc.kind {
        RunKind::LindbladReference => lindblad_evolve_with_rates(&rho0, &rc.ops, rc.kernel.a_delta(), &cfg.grid),
        RunKind::AnalyticCommuting => cfg
            .grid
            .checkpoint_times()
            .iter()
            .map(|&t| analytic_commuting_rho(&rc.kernel, &rc.ops, &rho0, cfg.grid.t0, t))
            .collect(),
        RunKind::Stochastic(_) => unreachable!("reference_states called on a stochastic run"),
    }
}

/// Executes every run of a scenario, evaluates its comparisons, and writes
/// `<run>.csv` per run plus `report.txt`, `report.json` and `manifest.json`
/// into the output directory.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<ScenarioReport> {
    let seed = opts.seed.unwrap_or(cfg.seed);
    let n = opts.trajectories.unwrap_or(cfg.trajectories);
    if n < 2 {
        return Err(Error::InvalidInput("at least two trajectories are needed".into()));
    }
    let out_dir = resolve_output_dir(cfg, opts);
    fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    let mut results = Results { cfg, data: BTreeMap::new(), boots: BTreeMap::new() };
    let mut summaries = Vec::new();
    for (i, rc) in cfg.runs.iter().enumerate() {
        let (data, run_seed) = match rc.kind {
            RunKind::Stochastic(eq) => {
                let mut p = Propagator::new(eq, &rc.ops, &rc.kernel, rc.drift_mode, &cfg.grid, rc.scheme)?;
                if let Some(o) = &rc.explicit_drift {
                    p = p.with_drift(o.clone())?;
                }
                let s = run_seed(seed, i);
                let acc = run_ensemble(&p, &rc.initial_state, n, s)?;
                (RunData::Ensemble { acc, seed: s }, Some(s))
            }
            _ => (RunData::Reference(reference_states(rc, cfg)?), None),
        };
        let final_mean_sq_norm = match &data {
            RunData::Ensemble { acc, .. } => Some(acc.mean_sq_norm(acc.times().len() - 1).value.re),
            _ => None,
        };
        results.data.insert(rc.name.clone(), data);
        summaries.push(RunSummary {
            name: rc.name.clone(),
            equation: rc.kind.name().into(),
            kernel: rc.kernel_preset.label(),
            drift: rc.drift_label(),
            scheme: if rc.kind.is_reference() { "rk4".into() } else { format!("{:?}", rc.scheme).to_lowercase() },
            measure: measure_name(rc.measure).into(),
            seed: run_seed,
            trajectories: if rc.kind.is_reference() { 0 } else { n },
            hamiltonian_shift_l2: rc.hamiltonian_shift_l2,
            final_mean_sq_norm,
            artifact: format!("{}.csv", rc.name),
        });
    }

    for rc in &cfg.runs {
        let path = out_dir.join(format!("{}.csv", rc.name));
        let file = BufWriter::new(fs::File::create(&path).map_err(|e| io_err(&path, e))?);
        if rc.kind.is_reference() {
            write_reference_csv(file, &cfg.grid.checkpoint_times(), results.reference(&rc.name)?)?;
        } else {
            let reference = match &rc.reference {
                Some(r) => Some(results.reference(r)?.to_vec()),
                None => None,
            };
            let boot = results.boot(&rc.name, rc.measure)?.clone();
            write_ensemble_csv(file, results.acc(&rc.name)?, &boot, &rc.ops, reference.as_deref())?;
        }
    }

    let mut comparisons = Vec::new();
    for c in &cfg.comparisons {
        comparisons.push(results.evaluate(c)?);
    }
    let pass = comparisons.iter().all(|c| c.pass || !c.required);
    let report = ScenarioReport {
        scenario: cfg.name.clone(),
        description: cfg.description.clone(),
        seed,
        trajectories: n,
        pass,
        runs: summaries,
        comparisons,
        output_dir: out_dir.display().to_string(),
    };

    let write = |name: &str, body: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| io_err(&path, e))
    };
    write("report.txt", report.to_text())?;
    write("report.json", to_json(&ReportFile::from(&report))?)?;
    write("manifest.json", to_json(&manifest(cfg, &report))?)?;
    Ok(report)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Error::Io(e.to_string()))
}

/// `report.json` omits the output directory so artifacts do not depend on where they were written.
#[derive(Serialize)]
struct ReportFile<'a> {
    scenario: &'a str,
    seed: u64,
    trajectories: usize,
    pass: bool,
    runs: &'a [RunSummary],
    comparisons: &'a [ComparisonOutcome],
}

impl<'a> From<&'a ScenarioReport> for ReportFile<'a> {
    fn from(r: &'a ScenarioReport) -> Self {
        Self {
            scenario: &r.scenario,
            seed: r.seed,
            trajectories: r.trajectories,
            pass: r.pass,
            runs: &r.runs,
            comparisons: &r.comparisons,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    sselab_version: &'static str,
    csv_schema: &'static str,
    seed: u64,
    trajectories: usize,
    bootstrap_resamples: usize,
    grid: GridManifest,
    system: &'a str,
    runs: Vec<RunManifest<'a>>,
    comparisons: Vec<ComparisonManifest<'a>>,
}

#[derive(Serialize)]
struct GridManifest {
    t0: f64,
    dt: f64,
    t_final: f64,
    n_steps: usize,
    checkpoints: usize,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    name: &'a str,
    equation: &'a str,
    kernel_preset: &'a str,
    drift_mode: &'a str,
    scheme: &'a str,
    seed: Option<u64>,
    hamiltonian_shift_l2: f64,
    artifact: &'a str,
}

#[derive(Serialize)]
struct ComparisonManifest<'a> {
    name: &'a str,
    kind: &'a str,
    tolerance: &'a str,
    required: bool,
}

fn manifest<'a>(cfg: &'a ScenarioConfig, report: &'a ScenarioReport) -> Manifest<'a> {
    Manifest {
        scenario: &cfg.name,
        sselab_version: env!("CARGO_PKG_VERSION"),
        csv_schema: "1",
        seed: report.seed,
        trajectories: report.trajectories,
        bootstrap_resamples: cfg.bootstrap_resamples,
        grid: GridManifest {
            t0: cfg.grid.t0,
            dt: cfg.grid.dt,
            t_final: cfg.grid.t_final(),
            n_steps: cfg.grid.n_steps,
            checkpoints: cfg.grid.checkpoints.len(),
        },
        system: &cfg.system_label,
        runs: report
            .runs
            .iter()
            .map(|r| RunManifest {
                name: &r.name,
                equation: &r.equation,
                kernel_preset: &r.kernel,
                drift_mode: &r.drift,
                scheme: &r.scheme,
                seed: r.seed,
                hamiltonian_shift_l2: r.hamiltonian_shift_l2,
                artifact: &r.artifact,
            })
            .collect(),
        comparisons: report
            .comparisons
            .iter()
            .map(|c| ComparisonManifest { name: &c.name, kind: &c.kind, tolerance: &c.criterion, required: c.required })
            .collect(),
    }
}
