use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use toml::de::{DeTable, DeValue};
use toml::Spanned;

use crate::dynamics::{DriftMode, Equation, OperatorSet, Scheme};
use crate::ensemble::{Measure, BOOTSTRAP_RESAMPLES};
use crate::hilbert::{Operator, StateVector, C64};
use crate::noise::{KernelPair, TabulatedKernel, TimeGrid};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_TRAJECTORIES: usize = 2000;

pub const EQUATIONS: &[&str] = &[
    "linear_white",
    "nonlinear_white",
    "guided_white",
    "colored_commuting",
    "lindblad_reference",
    "analytic_commuting",
];
pub const SYSTEM_PRESETS: &[&str] = &["qubit_sigma_z", "qubit_sigma_x", "two_qubit_zz"];
pub const KERNEL_PRESETS: &[&str] = &[
    "circular_white",
    "real_white",
    "imaginary_white",
    "rotated_real_white",
    "real_ou",
    "imaginary_ou",
    "general_ou",
    "tabulated",
];
pub const DRIFT_MODES: &[&str] = &["general_from_kernel", "literal_rex", "none", "explicit"];
pub const COMPARISON_KINDS: &[&str] = &[
    "trace_distance",
    "exceeds",
    "agreement",
    "coherence",
    "norm_average",
    "born_frequencies",
    "variance_below",
    "variance_retained",
    "unitary_norm",
];

/// One problem found in a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Malformed syntax, wrong value type, unknown key or unknown name.
    Parse { line: usize, field: String, message: String },
    /// Well-formed but inconsistent or incomplete.
    Validation { field: String, message: String },
}

impl Violation {
    pub fn field(&self) -> &str {
        match self {
            Violation::Parse { field, .. } | Violation::Validation { field, .. } => field,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Violation::Parse { message, .. } | Violation::Validation { message, .. } => message,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Parse { line, field, message } => write!(f, "parse error at line {line}, {field}: {message}"),
            Violation::Validation { field, message } => write!(f, "validation error, {field}: {message}"),
        }
    }
}

/// Every violation found in a scenario, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} problem(s) in scenario:", self.violations.len())?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Named noise kernel with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelPreset {
    CircularWhite,
    RealWhite,
    ImaginaryWhite,
    RotatedRealWhite { phi: f64 },
    RealOu { gamma: f64 },
    ImaginaryOu { gamma: f64 },
    GeneralOu { gamma: f64, beta_scale: C64 },
    Tabulated { file: PathBuf },
}

impl KernelPreset {
    pub fn label(&self) -> String {
        match self {
            KernelPreset::CircularWhite => "circular_white".into(),
            KernelPreset::RealWhite => "real_white".into(),
            KernelPreset::ImaginaryWhite => "imaginary_white".into(),
            KernelPreset::RotatedRealWhite { phi } => format!("rotated_real_white(phi={phi})"),
            KernelPreset::RealOu { gamma } => format!("real_ou(gamma={gamma})"),
            KernelPreset::ImaginaryOu { gamma } => format!("imaginary_ou(gamma={gamma})"),
            KernelPreset::GeneralOu { gamma, beta_scale } => {
                format!("general_ou(gamma={gamma}, beta_scale={}{:+}i)", beta_scale.re, beta_scale.im)
            }
            KernelPreset::Tabulated { file } => format!("tabulated({})", file.display()),
        }
    }

    pub fn build(&self, n: usize) -> crate::error::Result<KernelPair> {
        let k = match self {
            KernelPreset::CircularWhite => KernelPair::circular_white(n),
            KernelPreset::RealWhite => KernelPair::real_white(n),
            KernelPreset::ImaginaryWhite => KernelPair::imaginary_white(n),
            KernelPreset::RotatedRealWhite { phi } => KernelPair::rotated_real_white(n, *phi),
            KernelPreset::RealOu { gamma } => KernelPair::real_ou(n, *gamma),
            KernelPreset::ImaginaryOu { gamma } => KernelPair::imaginary_ou(n, *gamma),
            KernelPreset::GeneralOu { gamma, beta_scale } => KernelPair::general_ou(n, *gamma, *beta_scale),
            KernelPreset::Tabulated { file } => {
                let f = std::fs::File::open(file).map_err(|e| {
                    crate::error::Error::InvalidInput(format!("cannot open kernel file {}: {e}", file.display()))
                })?;
                KernelPair::smooth(std::sync::Arc::new(TabulatedKernel::from_csv(f)?))
            }
        };
        Ok(k.with_label(self.label()))
    }

    /// Angle `φ` for which this is rotated-real white noise `e^{iφ}x`.
    fn rex_phi(&self) -> Option<f64> {
        match self {
            KernelPreset::RotatedRealWhite { phi } => Some(*phi),
            KernelPreset::RealWhite => Some(0.0),
            KernelPreset::ImaginaryWhite => Some(std::f64::consts::FRAC_PI_2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunKind {
    Stochastic(Equation),
    LindbladReference,
    AnalyticCommuting,
}

impl RunKind {
    pub fn name(&self) -> &'static str {
        match self {
            RunKind::Stochastic(e) => e.name(),
            RunKind::LindbladReference => "lindblad_reference",
            RunKind::AnalyticCommuting => "analytic_commuting",
        }
    }

    pub fn is_reference(&self) -> bool {
        !matches!(self, RunKind::Stochastic(_))
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub name: String,
    pub kind: RunKind,
    pub kernel_preset: KernelPreset,
    pub kernel: KernelPair,
    /// System operators with `hamiltonian_shift_l2 · Σ L_i†L_i` added to `H`.
    pub ops: OperatorSet,
    pub hamiltonian_shift_l2: f64,
    pub initial_state: StateVector,
    pub drift_mode: DriftMode,
    pub explicit_drift: Option<Operator>,
    pub scheme: Scheme,
    pub measure: Measure,
    /// Reference run used for the trace-distance column of the ensemble CSV.
    pub reference: Option<String>,
}

impl RunConfig {
    pub fn drift_label(&self) -> String {
        match (&self.explicit_drift, self.kind) {
            (Some(_), _) => "explicit".into(),
            (None, RunKind::Stochastic(Equation::ColoredCommuting)) => "memory_from_kernel".into(),
            (None, RunKind::Stochastic(_)) => self.drift_mode.name(),
            (None, _) => "n/a".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComparisonKind {
    /// `max_t D(ρ̂, ρ_ref) ≤ tolerance`.
    TraceDistance { run: String, reference: String, measure: Measure, tolerance: f64 },
    /// `max_t D(ρ̂, ρ_ref) > tolerance`.
    Exceeds { run: String, reference: String, measure: Measure, tolerance: f64 },
    /// `D(ρ̂_a, ρ̂_b) ≤ sigmas · (combined bootstrap error)` at every checkpoint.
    Agreement { run: String, other: String, measure: Measure, sigmas: f64 },
    /// `| |ρ̂_ij| − |ρ_ref,ij| | ≤ sigmas · σ_boot + allowance` at every checkpoint.
    Coherence { run: String, reference: String, entry: (usize, usize), measure: Measure, sigmas: f64, allowance: f64 },
    /// Whether the mean squared norm is flagged as non-conserved.
    NormAverage { run: String, expect_flagged: bool },
    /// Final-time outcome frequencies within binomial `sigmas` of the Born weights.
    BornFrequencies { run: String, expected: Option<Vec<f64>>, sigmas: f64 },
    /// Final-time mean `Var(L)` below `threshold`.
    VarianceBelow { run: String, threshold: f64 },
    /// Final-time mean `Var(L)` at least `fraction` of its initial value.
    VarianceRetained { run: String, fraction: f64 },
    /// Every trajectory has `|‖ψ‖ − 1| < tolerance` at checkpoints `t ≤ until`.
    UnitaryNorm { run: String, tolerance: f64, until: Option<f64> },
}

impl ComparisonKind {
    pub fn name(&self) -> &'static str {
        match self {
            ComparisonKind::TraceDistance { .. } => "trace_distance",
            ComparisonKind::Exceeds { .. } => "exceeds",
            ComparisonKind::Agreement { .. } => "agreement",
            ComparisonKind::Coherence { .. } => "coherence",
            ComparisonKind::NormAverage { .. } => "norm_average",
            ComparisonKind::BornFrequencies { .. } => "born_frequencies",
            ComparisonKind::VarianceBelow { .. } => "variance_below",
            ComparisonKind::VarianceRetained { .. } => "variance_retained",
            ComparisonKind::UnitaryNorm { .. } => "unitary_norm",
        }
    }

    pub fn run(&self) -> &str {
        match self {
            ComparisonKind::TraceDistance { run, .. }
            | ComparisonKind::Exceeds { run, .. }
            | ComparisonKind::Agreement { run, .. }
            | ComparisonKind::Coherence { run, .. }
            | ComparisonKind::NormAverage { run, .. }
            | ComparisonKind::BornFrequencies { run, .. }
            | ComparisonKind::VarianceBelow { run, .. }
            | ComparisonKind::VarianceRetained { run, .. }
            | ComparisonKind::UnitaryNorm { run, .. } => run,
        }
    }

    /// The second run a comparison reads, if any.
    pub fn partner(&self) -> Option<&str> {
        match self {
            ComparisonKind::TraceDistance { reference, .. }
            | ComparisonKind::Exceeds { reference, .. }
            | ComparisonKind::Coherence { reference, .. } => Some(reference),
            ComparisonKind::Agreement { other, .. } => Some(other),
            _ => None,
        }
    }

    /// The pass threshold, for manifests.
    pub fn tolerance(&self) -> String {
        match self {
            ComparisonKind::TraceDistance { tolerance, .. } => format!("max trace distance <= {tolerance}"),
            ComparisonKind::Exceeds { tolerance, .. } => format!("max trace distance > {tolerance}"),
            ComparisonKind::Agreement { sigmas, .. } => format!("distance <= {sigmas} combined bootstrap sigma"),
            ComparisonKind::Coherence { sigmas, allowance, .. } => {
                format!("coherence within {sigmas} bootstrap sigma + {allowance}")
            }
            ComparisonKind::NormAverage { expect_flagged, .. } => format!("flagged == {expect_flagged}"),
            ComparisonKind::BornFrequencies { sigmas, .. } => format!("frequencies within {sigmas} binomial sigma"),
            ComparisonKind::VarianceBelow { threshold, .. } => format!("final mean Var(L) < {threshold}"),
            ComparisonKind::VarianceRetained { fraction, .. } => format!("final mean Var(L) >= {fraction} x initial"),
            ComparisonKind::UnitaryNorm { tolerance, until, .. } => match until {
                Some(u) => format!("max |norm - 1| < {tolerance} for t <= {u}"),
                None => format!("max |norm - 1| < {tolerance}"),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    pub name: String,
    pub kind: ComparisonKind,
    /// Informational comparisons are reported but do not affect the exit code.
    pub required: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    pub system_label: String,
    pub ops: OperatorSet,
    pub initial_state: StateVector,
    pub grid: TimeGrid,
    pub trajectories: usize,
    pub seed: u64,
    pub bootstrap_resamples: usize,
    pub output_dir: Option<PathBuf>,
    pub runs: Vec<RunConfig>,
    pub comparisons: Vec<ComparisonConfig>,
}

impl ScenarioConfig {
    pub fn run(&self, name: &str) -> Option<&RunConfig> {
        self.runs.iter().find(|r| r.name == name)
    }
}

pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ConfigError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
        violations: vec![Violation::Validation { field: "path".into(), message: format!("{}: {e}", path.display()) }],
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_scenario_str(&src, &base)
}

/// Parses scenario text; relative file paths resolve against `base_dir`.
pub fn parse_scenario_str(src: &str, base_dir: &Path) -> Result<ScenarioConfig, ConfigError> {
    let doc = match DeTable::parse(src) {
        Ok(doc) => doc,
        Err(e) => {
            let line = e.span().map_or(1, |s| line_of(src, s.start));
            return Err(ConfigError {
                violations: vec![Violation::Parse {
                    line,
                    field: "<document>".into(),
                    message: e.message().trim().to_string(),
                }],
            });
        }
    };
    let mut cx = Ctx { src, base_dir, violations: Vec::new() };
    let cfg = cx.scenario(doc.get_ref());
    match cfg {
        Some(cfg) if cx.violations.is_empty() => Ok(cfg),
        _ => Err(ConfigError { violations: cx.violations }),
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

type Node<'i> = Spanned<DeValue<'i>>;

#[derive(Clone, Copy)]
struct Tbl<'t, 'i> {
    table: &'t DeTable<'i>,
}

impl<'t, 'i> Tbl<'t, 'i> {
    fn get(&self, key: &str) -> Option<&'t Node<'i>> {
        self.table.iter().find(|(k, _)| k.get_ref().as_ref() == key).map(|(_, v)| v)
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() { key.to_string() } else { format!("{path}.{key}") }
}

struct Ctx<'s> {
    src: &'s str,
    base_dir: &'s Path,
    violations: Vec<Violation>,
}

struct SystemSpec {
    label: String,
    ops: OperatorSet,
}

impl<'s> Ctx<'s> {
    fn parse_err(&mut self, at: usize, field: &str, message: impl Into<String>) {
        self.violations.push(Violation::Parse {
            line: line_of(self.src, at),
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn invalid(&mut self, field: &str, message: impl Into<String>) {
        self.violations.push(Violation::Validation { field: field.to_string(), message: message.into() });
    }

    fn check_keys(&mut self, t: Tbl<'_, '_>, path: &str, allowed: &[&str]) {
        for (k, _) in t.table.iter() {
            let key = k.get_ref().as_ref();
            if !allowed.contains(&key) {
                self.parse_err(
                    k.span().start,
                    &join(path, key),
                    format!("unknown field '{key}'; allowed: {}", allowed.join(", ")),
                );
            }
        }
    }

    fn as_table<'t, 'i>(&mut self, node: &'t Node<'i>, field: &str) -> Option<Tbl<'t, 'i>> {
        match node.get_ref() {
            DeValue::Table(t) => Some(Tbl { table: t }),
            other => {
                self.parse_err(node.span().start, field, format!("expected a table, found {}", other.type_str()));
                None
            }
        }
    }

    fn opt_table<'t, 'i>(&mut self, t: Tbl<'t, 'i>, path: &str, key: &str) -> Option<Tbl<'t, 'i>> {
        let node = t.get(key)?;
        self.as_table(node, &join(path, key))
    }

    fn number(&mut self, node: &Node<'_>, field: &str) -> Option<f64> {
        match node.get_ref() {
            DeValue::Float(f) => match f.as_str().replace('_', "").parse::<f64>() {
                Ok(x) => Some(x),
                Err(_) => {
                    self.parse_err(node.span().start, field, format!("invalid number '{}'", f.as_str()));
                    None
                }
            },
            DeValue::Integer(i) => match integer(i) {
                Some(v) => Some(v as f64),
                None => {
                    self.parse_err(node.span().start, field, format!("invalid integer '{}'", i.as_str()));
                    None
                }
            },
            other => {
                self.parse_err(node.span().start, field, format!("expected a number, found {}", other.type_str()));
                None
            }
        }
    }

    fn opt_f64(&mut self, t: Tbl<'_, '_>, path: &str, key: &str) -> Option<f64> {
        let node = t.get(key)?;
        self.number(node, &join(path, key))
    }

    fn opt_count(&mut self, t: Tbl<'_, '_>, path: &str, key: &str) -> Option<u64> {
        let node = t.get(key)?;
        let field = join(path, key);
        match node.get_ref() {
            DeValue::Integer(i) => match integer(i) {
                Some(v) if v >= 0 => Some(v as u64),
                _ => {
                    self.parse_err(node.span().start, &field, "expected a non-negative integer");
                    None
                }
            },
            other => {
                self.parse_err(node.span().start, &field, format!("expected an integer, found {}", other.type_str()));
                None
            }
        }
    }

    fn opt_bool(&mut self, t: Tbl<'_, '_>, path: &str, key: &str) -> Option<bool> {
        let node = t.get(key)?;
        match node.get_ref() {
            DeValue::Boolean(b) => Some(*b),
            other => {
                self.parse_err(node.span().start, &join(path, key), format!("expected a boolean, found {}", other.type_str()));
                None
            }
        }
    }

    fn opt_str<'t>(&mut self, t: Tbl<'t, '_>, path: &str, key: &str) -> Option<(String, usize)> {
        let node = t.get(key)?;
        match node.get_ref() {
            DeValue::String(s) => Some((s.to_string(), node.span().start)),
            other => {
                self.parse_err(node.span().start, &join(path, key), format!("expected a string, found {}", other.type_str()));
                None
            }
        }
    }

    /// String restricted to `allowed`; unknown names are parse errors listing the allowed values.
    fn opt_choice(&mut self, t: Tbl<'_, '_>, path: &str, key: &str, allowed: &[&str]) -> Option<String> {
        let (s, at) = self.opt_str(t, path, key)?;
        if allowed.contains(&s.as_str()) {
            Some(s)
        } else {
            self.parse_err(at, &join(path, key), format!("unknown value '{s}'; allowed: {}", allowed.join(", ")));
            None
        }
    }

    fn array<'t, 'i>(&mut self, node: &'t Node<'i>, field: &str) -> Option<&'t [Node<'i>]> {
        match node.get_ref() {
            DeValue::Array(a) => Some(a.as_ref()),
            other => {
                self.parse_err(node.span().start, field, format!("expected an array, found {}", other.type_str()));
                None
            }
        }
    }

    /// A number, or a `[re, im]` pair.
    fn complex(&mut self, node: &Node<'_>, field: &str) -> Option<C64> {
        match node.get_ref() {
            DeValue::Array(a) => {
                if a.len() != 2 {
                    self.parse_err(node.span().start, field, format!("expected [re, im], found {} elements", a.len()));
                    return None;
                }
                let re = self.number(&a[0], field);
                let im = self.number(&a[1], field);
                Some(C64::new(re?, im?))
            }
            _ => self.number(node, field).map(|x| C64::new(x, 0.0)),
        }
    }

    fn complex_vector(&mut self, node: &Node<'_>, field: &str) -> Option<Vec<C64>> {
        let items = self.array(node, field)?;
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.iter().enumerate() {
            match self.complex(item, &format!("{field}[{i}]")) {
                Some(z) => out.push(z),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    /// Square matrix written as a list of rows of entries.
    fn matrix(&mut self, node: &Node<'_>, field: &str) -> Option<DMatrix<C64>> {
        let rows = self.array(node, field)?;
        let n = rows.len();
        if n == 0 {
            self.parse_err(node.span().start, field, "matrix has no rows");
            return None;
        }
        let mut m = DMatrix::zeros(n, n);
        let mut ok = true;
        for (i, row) in rows.iter().enumerate() {
            let f = format!("{field}[{i}]");
            let Some(entries) = self.complex_vector(row, &f) else {
                ok = false;
                continue;
            };
            if entries.len() != n {
                self.parse_err(row.span().start, &f, format!("row has {} entries, matrix needs {n}", entries.len()));
                ok = false;
                continue;
            }
            for (j, z) in entries.into_iter().enumerate() {
                m[(i, j)] = z;
            }
        }
        ok.then_some(m)
    }

    fn scenario(&mut self, root: &DeTable<'_>) -> Option<ScenarioConfig> {
        let t = Tbl { table: root };
        self.check_keys(
            t,
            "",
            &["name", "description", "system", "initial_state", "kernel", "grid", "ensemble", "output", "runs", "comparisons"],
        );
        let name = self.opt_str(t, "", "name").map(|s| s.0);
        if name.is_none() && t.get("name").is_none() {
            self.invalid("name", "scenario name is required");
        }
        let description = self.opt_str(t, "", "description").map(|s| s.0).unwrap_or_default();

        let system = match self.opt_table(t, "", "system") {
            Some(s) => self.system(s),
            None => {
                if t.get("system").is_none() {
                    self.invalid("system", "a [system] table is required");
                }
                None
            }
        };
        let dim = system.as_ref().map(|s| s.ops.dim());
        let n_channels = system.as_ref().map(|s| s.ops.n_channels());

        let initial_state = match self.opt_table(t, "", "initial_state") {
            Some(s) => self.initial_state(s, "initial_state", dim),
            None => dim.map(StateVector::uniform),
        };
        let kernel = match self.opt_table(t, "", "kernel") {
            Some(k) => self.kernel(k, "kernel", n_channels),
            None => Some((KernelPreset::CircularWhite, n_channels.map(KernelPair::circular_white))),
        };
        let grid = self.grid(t);
        let (trajectories, seed, bootstrap_resamples) = self.ensemble(t);
        let output_dir = self.opt_table(t, "", "output").and_then(|o| {
            self.check_keys(o, "output", &["dir"]);
            self.opt_str(o, "output", "dir").map(|s| PathBuf::from(s.0))
        });

        let mut runs = Vec::new();
        if let Some(node) = t.get("runs") {
            if let Some(items) = self.array(node, "runs") {
                for (i, item) in items.iter().enumerate() {
                    let path = format!("runs[{i}]");
                    if let Some(rt) = self.as_table(item, &path) {
                        if let Some(r) = self.run(rt, &path, system.as_ref(), initial_state.as_ref(), kernel.as_ref()) {
                            runs.push(r);
                        }
                    }
                }
            }
        } else {
            self.invalid("runs", "at least one [[runs]] entry is required");
        }
        let mut seen = std::collections::HashSet::new();
        for r in &runs {
            if !seen.insert(r.name.clone()) {
                self.invalid("runs.name", format!("run name '{}' is used more than once", r.name));
            }
        }

        let mut comparisons = Vec::new();
        if let Some(node) = t.get("comparisons") {
            if let Some(items) = self.array(node, "comparisons") {
                for (i, item) in items.iter().enumerate() {
                    let path = format!("comparisons[{i}]");
                    if let Some(ct) = self.as_table(item, &path) {
                        if let Some(c) = self.comparison(ct, &path) {
                            comparisons.push((path, c));
                        }
                    }
                }
            }
        }
        for (path, c) in &comparisons {
            self.check_comparison(path, c, &runs);
        }

        let system = system?;
        Some(ScenarioConfig {
            name: name?,
            description,
            system_label: system.label,
            ops: system.ops,
            initial_state: initial_state?,
            grid: grid?,
            trajectories,
            seed,
            bootstrap_resamples,
            output_dir,
            runs,
            comparisons: comparisons.into_iter().map(|(_, c)| c).collect(),
        })
    }

    fn system(&mut self, t: Tbl<'_, '_>) -> Option<SystemSpec> {
        self.check_keys(t, "system", &["preset", "dim", "hamiltonian", "couplings"]);
        let preset = self.opt_choice(t, "system", "preset", SYSTEM_PRESETS);
        let dim = self.opt_count(t, "system", "dim").map(|d| d as usize);
        let h = t.get("hamiltonian").and_then(|n| self.matrix(n, "system.hamiltonian"));
        let couplings: Option<Vec<DMatrix<C64>>> = t.get("couplings").and_then(|node| {
            let items = self.array(node, "system.couplings")?;
            let mut out = Vec::new();
            let mut ok = true;
            for (i, item) in items.iter().enumerate() {
                match self.matrix(item, &format!("system.couplings[{i}]")) {
                    Some(m) => out.push(m),
                    None => ok = false,
                }
            }
            ok.then_some(out)
        });
        let had_preset_key = t.get("preset").is_some();
        let had_couplings_key = t.get("couplings").is_some();

        let (label, base) = match (preset, had_preset_key) {
            (Some(p), _) => {
                if had_couplings_key {
                    self.invalid("system.couplings", "system.preset and system.couplings cannot both be given");
                    return None;
                }
                let ops = match p.as_str() {
                    "qubit_sigma_z" => OperatorSet::qubit_sigma_z(),
                    "qubit_sigma_x" => OperatorSet::qubit_sigma_x(),
                    _ => OperatorSet::two_qubit_zz(),
                };
                (p, Some((ops.hamiltonian().clone(), ops.couplings().to_vec())))
            }
            (None, true) => (String::new(), None),
            (None, false) => {
                let Some(ls) = couplings else {
                    if !had_couplings_key {
                        self.invalid("system", "either system.preset or system.couplings is required");
                    }
                    return None;
                };
                if ls.is_empty() {
                    self.invalid("system.couplings", "at least one coupling operator is required");
                    return None;
                }
                let d = ls[0].nrows();
                let h0 = DMatrix::zeros(d, d);
                ("custom".to_string(), Some((Operator::from_raw(h0), ls.into_iter().map(Operator::from_raw).collect())))
            }
        };
        let (mut hamiltonian, couplings) = base?;
        if let Some(h) = h {
            hamiltonian = Operator::from_raw(h);
        }
        let d = couplings[0].dim();
        if let Some(dd) = dim {
            if dd != d {
                self.invalid("system.dim", format!("system.dim = {dd} but system.couplings have dimension {d}"));
            }
        }
        for (i, l) in couplings.iter().enumerate() {
            if l.dim() != d {
                self.invalid(
                    &format!("system.couplings[{i}]"),
                    format!("dimension {} differs from system.couplings[0] ({d})", l.dim()),
                );
                return None;
            }
        }
        if hamiltonian.dim() != d {
            self.invalid(
                "system.hamiltonian",
                format!("system.hamiltonian has dimension {} but system.couplings have dimension {d}", hamiltonian.dim()),
            );
            return None;
        }
        match OperatorSet::new(hamiltonian, couplings) {
            Ok(ops) => Some(SystemSpec { label, ops }),
            Err(e) => {
                self.invalid("system.hamiltonian", e.to_string());
                None
            }
        }
    }

    fn initial_state(&mut self, t: Tbl<'_, '_>, path: &str, dim: Option<usize>) -> Option<StateVector> {
        self.check_keys(t, path, &["preset", "index", "amplitudes"]);
        let preset = self.opt_choice(t, path, "preset", &["uniform", "basis"]);
        let index = self.opt_count(t, path, "index");
        let amps = t.get("amplitudes").and_then(|n| self.complex_vector(n, &join(path, "amplitudes")));
        let dim = dim?;
        match (preset.as_deref(), amps) {
            (Some(_), Some(_)) => {
                self.invalid(&join(path, "amplitudes"), format!("{path}.preset and {path}.amplitudes are exclusive"));
                None
            }
            (Some("basis"), None) => match index {
                Some(k) if (k as usize) < dim => Some(StateVector::basis(dim, k as usize)),
                Some(k) => {
                    self.invalid(&join(path, "index"), format!("basis index {k} out of range for dimension {dim}"));
                    None
                }
                None => {
                    self.invalid(&join(path, "index"), "preset 'basis' needs an index");
                    None
                }
            },
            (Some(_), None) => Some(StateVector::uniform(dim)),
            (None, Some(a)) => {
                if a.len() != dim {
                    self.invalid(
                        &join(path, "amplitudes"),
                        format!("{path}.amplitudes has {} entries but system dimension is {dim}", a.len()),
                    );
                    return None;
                }
                match StateVector::new(DVector::from_vec(a)) {
                    Ok(s) if s.norm_sqr() > 0.0 => Some(s.normalized()),
                    _ => {
                        self.invalid(&join(path, "amplitudes"), "amplitudes must be finite and not all zero");
                        None
                    }
                }
            }
            (None, None) => Some(StateVector::uniform(dim)),
        }
    }

    fn kernel(&mut self, t: Tbl<'_, '_>, path: &str, n_channels: Option<usize>) -> Option<(KernelPreset, Option<KernelPair>)> {
        self.check_keys(t, path, &["preset", "phi", "gamma", "beta_scale", "file", "channels"]);
        let preset = self.opt_choice(t, path, "preset", KERNEL_PRESETS);
        if preset.is_none() && t.get("preset").is_none() {
            self.invalid(&join(path, "preset"), "kernel preset is required");
        }
        let phi = self.opt_f64(t, path, "phi");
        let gamma = self.opt_f64(t, path, "gamma");
        let beta_scale = t.get("beta_scale").and_then(|n| self.complex(n, &join(path, "beta_scale")));
        let file = self.opt_str(t, path, "file").map(|s| s.0);
        let channels = self.opt_count(t, path, "channels").map(|c| c as usize);
        let preset = preset?;

        let need = |cx: &mut Self, v: Option<f64>, key: &str| -> Option<f64> {
            if v.is_none() && t.get(key).is_none() {
                cx.invalid(&join(path, key), format!("required by kernel preset '{preset}'"));
            }
            v
        };
        let kp = match preset.as_str() {
            "circular_white" => KernelPreset::CircularWhite,
            "real_white" => KernelPreset::RealWhite,
            "imaginary_white" => KernelPreset::ImaginaryWhite,
            "rotated_real_white" => KernelPreset::RotatedRealWhite { phi: need(self, phi, "phi")? },
            "real_ou" => KernelPreset::RealOu { gamma: need(self, gamma, "gamma")? },
            "imaginary_ou" => KernelPreset::ImaginaryOu { gamma: need(self, gamma, "gamma")? },
            "general_ou" => {
                let g = need(self, gamma, "gamma");
                if beta_scale.is_none() && t.get("beta_scale").is_none() {
                    self.invalid(&join(path, "beta_scale"), "required by kernel preset 'general_ou'");
                }
                KernelPreset::GeneralOu { gamma: g?, beta_scale: beta_scale? }
            }
            _ => match file {
                Some(f) => KernelPreset::Tabulated { file: self.base_dir.join(f) },
                None => {
                    self.invalid(&join(path, "file"), "required by kernel preset 'tabulated'");
                    return None;
                }
            },
        };
        if let (Some(c), Some(n)) = (channels, n_channels) {
            if c != n {
                self.invalid(
                    &join(path, "channels"),
                    format!("{path}.channels = {c} but system.couplings supplies {n} operator(s)"),
                );
                return None;
            }
        }
        let Some(n) = n_channels else {
            return Some((kp, None));
        };
        match kp.build(n) {
            Ok(k) if k.n_channels() == n => Some((kp, Some(k))),
            Ok(k) => {
                self.invalid(
                    &join(path, "file"),
                    format!("kernel file has {} channel(s) but system.couplings supplies {n} operator(s)", k.n_channels()),
                );
                None
            }
            Err(e) => {
                self.invalid(path, e.to_string());
                None
            }
        }
    }

    fn grid(&mut self, t: Tbl<'_, '_>) -> Option<TimeGrid> {
        let g = self.opt_table(t, "", "grid");
        let (t0, dt, t_final, stride) = match g {
            Some(g) => {
                self.check_keys(g, "grid", &["t0", "dt", "t_final", "stride"]);
                (
                    self.opt_f64(g, "grid", "t0"),
                    self.opt_f64(g, "grid", "dt"),
                    self.opt_f64(g, "grid", "t_final"),
                    self.opt_count(g, "grid", "stride"),
                )
            }
            None => (None, None, None, None),
        };
        let t0 = t0.unwrap_or(0.0);
        let dt = dt.unwrap_or(DEFAULT_DT);
        let t_final = t_final.unwrap_or(t0 + 1.0);
        if !(dt > 0.0) || !dt.is_finite() {
            self.invalid("grid.dt", format!("dt must be positive, got {dt}"));
            return None;
        }
        if !(t_final > t0) {
            self.invalid("grid.t_final", format!("grid.t_final = {t_final} must exceed grid.t0 = {t0}"));
            return None;
        }
        let steps = ((t_final - t0) / dt).round() as usize;
        let stride = stride.map_or((steps / 10).max(1), |s| s.max(1) as usize);
        match TimeGrid::spanning(t0, t_final, dt, stride) {
            Ok(g) => Some(g),
            Err(e) => {
                self.invalid("grid", e.to_string());
                None
            }
        }
    }

    fn ensemble(&mut self, t: Tbl<'_, '_>) -> (usize, u64, usize) {
        let e = self.opt_table(t, "", "ensemble");
        let Some(e) = e else {
            return (DEFAULT_TRAJECTORIES, 0, BOOTSTRAP_RESAMPLES);
        };
        self.check_keys(e, "ensemble", &["trajectories", "seed", "bootstrap"]);
        let n = self.opt_count(e, "ensemble", "trajectories").map_or(DEFAULT_TRAJECTORIES, |n| n as usize);
        if n < 2 {
            self.invalid("ensemble.trajectories", "at least two trajectories are needed for error estimates");
        }
        let seed = self.opt_count(e, "ensemble", "seed").unwrap_or(0);
        let b = self.opt_count(e, "ensemble", "bootstrap").map_or(BOOTSTRAP_RESAMPLES, |b| b as usize);
        if b < 2 {
            self.invalid("ensemble.bootstrap", "at least two bootstrap resamples are needed");
        }
        (n, seed, b)
    }

    fn run(
        &mut self,
        t: Tbl<'_, '_>,
        path: &str,
        system: Option<&SystemSpec>,
        default_initial: Option<&StateVector>,
        default_kernel: Option<&(KernelPreset, Option<KernelPair>)>,
    ) -> Option<RunConfig> {
        self.check_keys(
            t,
            path,
            &[
                "name",
                "equation",
                "kernel",
                "initial_state",
                "drift_mode",
                "rex_phi",
                "drift",
                "scheme",
                "measure",
                "reference",
                "hamiltonian_shift_l2",
            ],
        );
        let name = self.opt_str(t, path, "name").map(|s| s.0);
        if name.is_none() && t.get("name").is_none() {
            self.invalid(&join(path, "name"), "run name is required");
        }
        let equation = self.opt_choice(t, path, "equation", EQUATIONS);
        if equation.is_none() && t.get("equation").is_none() {
            self.invalid(&join(path, "equation"), format!("required; allowed: {}", EQUATIONS.join(", ")));
        }
        let drift = self.opt_choice(t, path, "drift_mode", DRIFT_MODES);
        let rex_phi = self.opt_f64(t, path, "rex_phi");
        let explicit = t.get("drift").and_then(|n| self.matrix(n, &join(path, "drift")));
        let scheme = self.opt_choice(t, path, "scheme", &["rk4", "heun"]);
        let measure = self.opt_choice(t, path, "measure", &["raw", "physical"]);
        let reference = self.opt_str(t, path, "reference").map(|s| s.0);
        let shift = self.opt_f64(t, path, "hamiltonian_shift_l2").unwrap_or(0.0);
        let n_channels = system.map(|s| s.ops.n_channels());
        let dim = system.map(|s| s.ops.dim());
        let kernel = match self.opt_table(t, path, "kernel") {
            Some(k) => self.kernel(k, &join(path, "kernel"), n_channels),
            None => default_kernel.cloned(),
        };
        let initial = match self.opt_table(t, path, "initial_state") {
            Some(s) => self.initial_state(s, &join(path, "initial_state"), dim),
            None => default_initial.cloned(),
        };

        let name = name?;
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) {
            self.invalid(&join(path, "name"), format!("run name '{name}' must be non-empty and use only [A-Za-z0-9_.-]"));
            return None;
        }
        let kind = match equation?.as_str() {
            "linear_white" => RunKind::Stochastic(Equation::LinearWhite),
            "nonlinear_white" => RunKind::Stochastic(Equation::NonlinearWhite),
            "guided_white" => RunKind::Stochastic(Equation::GuidedWhite),
            "colored_commuting" => RunKind::Stochastic(Equation::ColoredCommuting),
            "lindblad_reference" => RunKind::LindbladReference,
            _ => RunKind::AnalyticCommuting,
        };
        let (kernel_preset, kernel) = kernel?;
        let system = system?;
        let kernel = kernel?;

        let drift_name = drift.as_deref().unwrap_or(if explicit.is_some() { "explicit" } else { "general_from_kernel" });
        if explicit.is_some() && drift_name != "explicit" {
            self.invalid(&join(path, "drift"), format!("{path}.drift requires drift_mode = \"explicit\""));
        }
        let mut explicit_drift = None;
        let drift_mode = match drift_name {
            "general_from_kernel" => DriftMode::GeneralFromKernel,
            "none" => DriftMode::None,
            "literal_rex" => match rex_phi.or(kernel_preset.rex_phi()) {
                Some(phi) => DriftMode::LiteralRex { phi },
                None => {
                    self.invalid(
                        &join(path, "rex_phi"),
                        format!("drift_mode literal_rex needs {path}.rex_phi or a rotated_real_white kernel"),
                    );
                    return None;
                }
            },
            _ => match explicit {
                Some(m) if m.nrows() == system.ops.dim() => {
                    explicit_drift = Some(Operator::from_raw(m));
                    DriftMode::GeneralFromKernel
                }
                Some(m) => {
                    self.invalid(
                        &join(path, "drift"),
                        format!("{path}.drift has dimension {} but the system has dimension {}", m.nrows(), system.ops.dim()),
                    );
                    return None;
                }
                None => {
                    self.invalid(&join(path, "drift"), "drift_mode explicit needs a drift matrix");
                    return None;
                }
            },
        };
        if drift_name != "general_from_kernel" && !matches!(kind, RunKind::Stochastic(Equation::LinearWhite)) {
            self.invalid(
                &join(path, "drift_mode"),
                format!("drift_mode '{drift_name}' applies only to linear_white runs, not {}", kind.name()),
            );
        }

        let ops = if shift != 0.0 {
            let h = system.ops.hamiltonian().add(&system.ops.sum_ldag_l().scale(C64::new(shift, 0.0)));
            match system.ops.with_hamiltonian(h) {
                Ok(o) => o,
                Err(e) => {
                    self.invalid(&join(path, "hamiltonian_shift_l2"), e.to_string());
                    return None;
                }
            }
        } else {
            system.ops.clone()
        };

        match kind {
            RunKind::Stochastic(Equation::LinearWhite | Equation::NonlinearWhite | Equation::GuidedWhite)
            | RunKind::LindbladReference
                if kernel.kind() != crate::noise::NoiseKind::White =>
            {
                self.invalid(
                    &join(path, "kernel"),
                    format!("{} needs a white kernel, got {}", kind.name(), kernel_preset.label()),
                );
            }
            RunKind::Stochastic(Equation::ColoredCommuting) | RunKind::AnalyticCommuting if !ops.is_commuting() => {
                self.invalid(&join(path, "equation"), format!("{} needs commuting system operators", kind.name()));
            }
            _ => {}
        }

        Some(RunConfig {
            name,
            kind,
            kernel_preset,
            kernel,
            ops,
            hamiltonian_shift_l2: shift,
            initial_state: initial?,
            drift_mode,
            explicit_drift,
            scheme: scheme.map_or(Scheme::Rk4, |s| s.parse().unwrap_or_default()),
            measure: if measure.as_deref() == Some("physical") { Measure::Physical } else { Measure::Raw },
            reference,
        })
    }

    fn comparison(&mut self, t: Tbl<'_, '_>, path: &str) -> Option<ComparisonConfig> {
        let kind = self.opt_choice(t, path, "kind", COMPARISON_KINDS);
        if kind.is_none() && t.get("kind").is_none() {
            self.invalid(&join(path, "kind"), format!("required; allowed: {}", COMPARISON_KINDS.join(", ")));
        }
        let kind = kind?;
        let extra: &[&str] = match kind.as_str() {
            "trace_distance" | "exceeds" => &["reference", "measure", "tolerance"],
            "agreement" => &["other", "measure", "sigmas"],
            "coherence" => &["reference", "measure", "sigmas", "allowance", "entry"],
            "norm_average" => &["expect_flagged"],
            "born_frequencies" => &["expected", "sigmas"],
            "variance_below" => &["threshold"],
            "variance_retained" => &["fraction"],
            _ => &["tolerance", "until"],
        };
        let mut allowed = vec!["name", "kind", "run", "required"];
        allowed.extend_from_slice(extra);
        self.check_keys(t, path, &allowed);

        let req_str = |cx: &mut Self, key: &str| -> Option<String> {
            let v = cx.opt_str(t, path, key).map(|s| s.0);
            if v.is_none() && t.get(key).is_none() {
                cx.invalid(&join(path, key), format!("required by comparison kind '{kind}'"));
            }
            v
        };
        let run = req_str(self, "run");
        let partner = match kind.as_str() {
            "trace_distance" | "exceeds" | "coherence" => req_str(self, "reference"),
            "agreement" => req_str(self, "other"),
            _ => None,
        };
        let req_f64 = |cx: &mut Self, key: &str| -> Option<f64> {
            let v = cx.opt_f64(t, path, key);
            if v.is_none() && t.get(key).is_none() {
                cx.invalid(&join(path, key), format!("required by comparison kind '{kind}'"));
            }
            v
        };
        let measure = match self.opt_choice(t, path, "measure", &["raw", "physical"]).as_deref() {
            Some("physical") => Measure::Physical,
            _ => Measure::Raw,
        };
        let sigmas = self.opt_f64(t, path, "sigmas").unwrap_or(3.0);
        let required = self.opt_bool(t, path, "required").unwrap_or(true);
        let name = self.opt_str(t, path, "name").map(|s| s.0);

        let k = match kind.as_str() {
            "trace_distance" => {
                ComparisonKind::TraceDistance { run: run?, reference: partner?, measure, tolerance: req_f64(self, "tolerance")? }
            }
            "exceeds" => ComparisonKind::Exceeds { run: run?, reference: partner?, measure, tolerance: req_f64(self, "tolerance")? },
            "agreement" => ComparisonKind::Agreement { run: run?, other: partner?, measure, sigmas },
            "coherence" => {
                let entry = match t.get("entry") {
                    Some(node) => {
                        let f = join(path, "entry");
                        let items = self.array(node, &f)?;
                        let idx: Vec<Option<f64>> = items.iter().map(|n| self.number(n, &f)).collect();
                        match idx.as_slice() {
                            [Some(i), Some(j)] if *i >= 0.0 && *j >= 0.0 => (*i as usize, *j as usize),
                            _ => {
                                self.parse_err(node.span().start, &f, "expected [i, j] with non-negative indices");
                                return None;
                            }
                        }
                    }
                    None => (0, 1),
                };
                let allowance = self.opt_f64(t, path, "allowance").unwrap_or(0.0);
                ComparisonKind::Coherence { run: run?, reference: partner?, entry, measure, sigmas, allowance }
            }
            "norm_average" => {
                ComparisonKind::NormAverage { run: run?, expect_flagged: self.opt_bool(t, path, "expect_flagged").unwrap_or(false) }
            }
            "born_frequencies" => {
                let expected = match t.get("expected") {
                    Some(node) => {
                        let f = join(path, "expected");
                        let items = self.array(node, &f)?;
                        let v: Option<Vec<f64>> = items.iter().map(|n| self.number(n, &f)).collect();
                        Some(v?)
                    }
                    None => None,
                };
                ComparisonKind::BornFrequencies { run: run?, expected, sigmas }
            }
            "variance_below" => ComparisonKind::VarianceBelow { run: run?, threshold: req_f64(self, "threshold")? },
            "variance_retained" => ComparisonKind::VarianceRetained { run: run?, fraction: req_f64(self, "fraction")? },
            _ => ComparisonKind::UnitaryNorm {
                run: run?,
                tolerance: req_f64(self, "tolerance")?,
                until: self.opt_f64(t, path, "until"),
            },
        };
        let name = name.unwrap_or_else(|| match k.partner() {
            Some(p) => format!("{}:{}~{}", k.name(), k.run(), p),
            None => format!("{}:{}", k.name(), k.run()),
        });
        Some(ComparisonConfig { name, kind: k, required })
    }

    fn check_comparison(&mut self, path: &str, c: &ComparisonConfig, runs: &[RunConfig]) {
        let find = |n: &str| runs.iter().find(|r| r.name == n);
        let Some(run) = find(c.kind.run()) else {
            self.invalid(&join(path, "run"), format!("no run named '{}'", c.kind.run()));
            return;
        };
        if run.kind.is_reference() {
            self.invalid(&join(path, "run"), format!("'{}' is a reference run; comparisons need a stochastic run", run.name));
            return;
        }
        if let Some(p) = c.kind.partner() {
            let key = if matches!(c.kind, ComparisonKind::Agreement { .. }) { "other" } else { "reference" };
            match find(p) {
                None => self.invalid(&join(path, key), format!("no run named '{p}'")),
                Some(r) if key == "reference" && !r.kind.is_reference() => self.invalid(
                    &join(path, key),
                    format!("'{p}' is a stochastic run; expected lindblad_reference or analytic_commuting"),
                ),
                _ => {}
            }
        }
        let dim = run.ops.dim();
        match &c.kind {
            ComparisonKind::Coherence { entry: (i, j), .. } if *i >= dim || *j >= dim => {
                self.invalid(&join(path, "entry"), format!("entry ({i}, {j}) out of range for dimension {dim}"));
            }
            ComparisonKind::BornFrequencies { .. } | ComparisonKind::VarianceBelow { .. } | ComparisonKind::VarianceRetained { .. }
                if !(run.ops.is_commuting() && run.ops.all_self_adjoint()) =>
            {
                self.invalid(&join(path, "kind"), format!("{} needs commuting self-adjoint couplings", c.kind.name()));
            }
            _ => {}
        }
    }
}

fn integer(i: &toml::de::DeInteger<'_>) -> Option<i64> {
    i64::from_str_radix(&i.as_str().replace('_', ""), i.radix()).ok()
}
