use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::dynamics::{white_drift, DriftMode, Equation, OperatorSet, Propagator, Scheme};
use crate::error::Error;
use crate::hilbert::{Operator, StateVector, C64};
use crate::noise::{
    furutsu_novikov_residual, validate_kernel, ExponentialKernel, KernelPair, NoiseSampler, TestFunctional, TimeGrid, DEFAULT_KERNEL_TOL,
};

/// Deliberate defects for negative controls of the selfcheck itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tamper {
    None,
    /// Delta kernels enter the memory drift with weight `α` instead of `½α`.
    Endpoint,
    /// The x–y cross block of the noise covariance has its sign flipped.
    CrossSign,
}

pub const ORDER_THRESHOLD: f64 = 0.9;
pub const REDUCTION_TOL: f64 = 1e-8;
pub const REALNESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfcheckReport {
    pub items: Vec<CheckItem>,
    pub seconds: f64,
}

impl SelfcheckReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn item(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|i| i.name == name)
    }
}

impl fmt::Display for SelfcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.items.iter().map(|i| i.name.len()).max().unwrap_or(0);
        for i in &self.items {
            writeln!(f, "{} {:<width$}  {}", if i.pass { "PASS" } else { "FAIL" }, i.name, i.detail)?;
        }
        let failed = self.items.iter().filter(|i| !i.pass).count();
        writeln!(f, "{} items, {} failed, {:.1} s", self.items.len(), failed, self.seconds)
    }
}

pub fn run_selfcheck() -> SelfcheckReport {
    run_selfcheck_with(Tamper::None)
}

pub fn run_selfcheck_with(tamper: Tamper) -> SelfcheckReport {
    let start = Instant::now();
    let mut items = Vec::new();
    let mut push = |name: &str, r: Result<(bool, String), Error>| {
        let (pass, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        items.push(CheckItem { name: name.into(), pass, detail });
    };
    push("kernel validation: realizable presets accepted", realizable_presets());
    push("kernel validation: a = 0, b != 0 rejected", invalid_pair_rejected());
    push("kernel validation: |beta_scale| > 1 rejected", oversized_pseudo_covariance_rejected());
    push("kernel validation: asymmetric delta b rejected", asymmetric_delta_rejected());
    push("rotated-real noise is real up to its phase", rotated_real_realness(tamper));
    push("Furutsu-Novikov linear functional on OU noise", furutsu_novikov_linear());
    push("drift-operator table", drift_table());
    push("white-noise reduction consistency of the memory drift", white_reduction(tamper));
    for (label, eq, kernel) in convergence_cases() {
        push(&format!("convergence slope: {label}"), convergence(eq, &kernel));
    }
    SelfcheckReport { items, seconds: start.elapsed().as_secs_f64() }
}

fn grid() -> TimeGrid {
    TimeGrid::uniform(0.0, 0.05, 20, 5).unwrap()
}

fn realizable_presets() -> Result<(bool, String), Error> {
    let presets = [
        KernelPair::circular_white(2),
        KernelPair::real_white(1),
        KernelPair::imaginary_white(1),
        KernelPair::rotated_real_white(1, std::f64::consts::FRAC_PI_3),
        KernelPair::real_ou(1, 2.0),
        KernelPair::imaginary_ou(1, 2.0),
        KernelPair::general_ou(1, 2.0, C64::new(0.0, 0.5)),
    ];
    let mut failed = Vec::new();
    for k in &presets {
        if let Err(e) = validate_kernel(k, &grid(), DEFAULT_KERNEL_TOL) {
            failed.push(format!("{}: {e}", k.label()));
        }
    }
    Ok((failed.is_empty(), if failed.is_empty() { format!("{} presets", presets.len()) } else { failed.join("; ") }))
}

fn expect_psd_failure(k: &KernelPair) -> (bool, String) {
    match validate_kernel(k, &grid(), DEFAULT_KERNEL_TOL) {
        Err(Error::NotPositiveSemidefinite { min_eigenvalue, .. }) => {
            (true, format!("min eigenvalue {min_eigenvalue:.3e}"))
        }
        Err(e) => (false, format!("wrong error: {e}")),
        Ok(()) => (false, "accepted".into()),
    }
}

fn invalid_pair_rejected() -> Result<(bool, String), Error> {
    let white = KernelPair::white(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, C64::new(1.0, 0.0)))?;
    let smooth = KernelPair::smooth(std::sync::Arc::new(ExponentialKernel {
        gamma: 2.0,
        channels: 1,
        a_scale: C64::new(0.0, 0.0),
        b_scale: C64::new(1.0, 0.0),
    }));
    let (p1, d1) = expect_psd_failure(&white);
    let (p2, d2) = expect_psd_failure(&smooth);
    Ok((p1 && p2, format!("white: {d1}; smooth: {d2}")))
}

fn oversized_pseudo_covariance_rejected() -> Result<(bool, String), Error> {
    Ok(expect_psd_failure(&KernelPair::general_ou(1, 2.0, C64::new(1.5, 0.0))))
}

fn asymmetric_delta_rejected() -> Result<(bool, String), Error> {
    let beta = DMatrix::from_row_slice(2, 2, &[C64::new(0.0, 0.0), C64::new(0.5, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    let k = KernelPair::white(DMatrix::identity(2, 2), beta)?;
    Ok(match validate_kernel(&k, &grid(), DEFAULT_KERNEL_TOL) {
        Err(Error::InconsistentKernel(m)) => (true, m),
        Err(e) => (false, format!("wrong error: {e}")),
        Ok(()) => (false, "accepted".into()),
    })
}

fn rotated_real_realness(tamper: Tamper) -> Result<(bool, String), Error> {
    let phi = std::f64::consts::FRAC_PI_3;
    let k = KernelPair::rotated_real_white(1, phi);
    let g = grid();
    let sampler = match tamper {
        Tamper::CrossSign => NoiseSampler::with_cross_sign(&k, &g, -1.0)?,
        _ => NoiseSampler::new(&k, &g)?,
    };
    let rot = C64::from_polar(1.0, -phi);
    let (mut worst_im, mut scale): (f64, f64) = (0.0, 0.0);
    for r in 0..200 {
        let path = sampler.sample(11, r);
        for z in path.values.iter() {
            worst_im = worst_im.max((rot * z).im.abs());
            scale = scale.max(z.norm());
        }
    }
    let rel = worst_im / scale;
    Ok((rel < REALNESS_TOL, format!("max |Im(e^(-i phi) z)| / max |z| = {rel:.3e}")))
}

fn furutsu_novikov_linear() -> Result<(bool, String), Error> {
    let g = TimeGrid::uniform(0.0, 0.05, 40, 40)?;
    let r = furutsu_novikov_residual(&KernelPair::real_ou(1, 2.0), &g, TestFunctional::Linear, 20_000, 7)?;
    Ok((r.within(3.0), format!("residual {:.3e} +- {:.3e} (lhs {:.5}, rhs {:.5})", r.residual, r.std_error, r.lhs, r.rhs)))
}

fn drift_table() -> Result<(bool, String), Error> {
    let one = C64::new(1.0, 0.0);
    let half = C64::new(0.5, 0.0);
    let lower = Operator::from_rows(&[&[C64::new(0.0, 0.0), one], &[C64::new(0.0, 0.0), C64::new(0.0, 0.0)]])?;
    let id = DMatrix::identity(1, 1);
    let mut worst: f64 = 0.0;
    for l in [Operator::pauli_z(), lower] {
        let ops = OperatorSet::new(Operator::zeros(2), vec![l.clone()])?;
        let (ldl, l2) = (l.dagger().mul(&l), l.mul(&l));
        let cases: [(DMatrix<C64>, DMatrix<C64>, Operator); 3] = [
            (id.clone(), DMatrix::zeros(1, 1), ldl.scale(-half)),
            (id.clone(), id.clone(), ldl.add(&l2).scale(-half)),
            (id.clone(), -id.clone(), ldl.add(&l2.scale(-one)).scale(-half)),
        ];
        for (a, b, expected) in cases {
            let o = white_drift(&ops, &a, &b, DriftMode::GeneralFromKernel)?;
            worst = worst.max(o.add(&expected.scale(-one)).max_abs());
        }
    }
    let phi = std::f64::consts::FRAC_PI_3;
    let ops = OperatorSet::qubit_sigma_z();
    let k = KernelPair::rotated_real_white(1, phi);
    let rex = white_drift(&ops, k.a_delta(), k.b_delta(), DriftMode::LiteralRex { phi })?;
    let expected = Operator::identity(2).scale(C64::new(-phi.cos().powi(2), 0.0));
    worst = worst.max(rex.add(&expected.scale(-one)).max_abs());
    let none = white_drift(&ops, k.a_delta(), k.b_delta(), DriftMode::None)?;
    worst = worst.max(none.max_abs());
    Ok((worst < 1e-14, format!("max entry error {worst:.2e} over 8 cases")))
}

/// Colored integrator on a white kernel against the white integrator, same paths.
fn white_reduction(tamper: Tamper) -> Result<(bool, String), Error> {
    let ops = OperatorSet::two_qubit_zz();
    let g = TimeGrid::uniform(0.0, 0.01, 100, 20)?;
    let psi0 = StateVector::uniform(4);
    let mut worst: f64 = 0.0;
    for k in [KernelPair::circular_white(2), KernelPair::rotated_real_white(2, 0.4)] {
        let white = Propagator::new(Equation::LinearWhite, &ops, &k, DriftMode::GeneralFromKernel, &g, Scheme::Rk4)?;
        let mut colored = Propagator::new(Equation::ColoredCommuting, &ops, &k, DriftMode::GeneralFromKernel, &g, Scheme::Rk4)?;
        if tamper == Tamper::Endpoint {
            colored = colored.with_endpoint(1.0)?;
        }
        for r in 0..20 {
            let path = white.sampler().sample(5, r);
            let a = white.propagate(&psi0, &path)?;
            let b = colored.propagate(&psi0, &path)?;
            for (x, y) in a.states.iter().zip(&b.states) {
                worst = worst.max((x.amplitudes() - y.amplitudes()).norm() / x.amplitudes().norm());
            }
        }
    }
    Ok((worst < REDUCTION_TOL, format!("max relative state difference {worst:.3e} (tolerance {REDUCTION_TOL:e})")))
}

fn convergence_cases() -> Vec<(String, Equation, KernelPair)> {
    vec![
        ("linear_white, circular".into(), Equation::LinearWhite, KernelPair::circular_white(1)),
        ("linear_white, real".into(), Equation::LinearWhite, KernelPair::real_white(1)),
        ("nonlinear_white, circular".into(), Equation::NonlinearWhite, KernelPair::circular_white(1)),
        ("guided_white, real".into(), Equation::GuidedWhite, KernelPair::real_white(1)),
        ("colored_commuting, real OU".into(), Equation::ColoredCommuting, KernelPair::real_ou(1, 2.0)),
    ]
}

fn convergence(eq: Equation, kernel: &KernelPair) -> Result<(bool, String), Error> {
    let g = TimeGrid::uniform(0.0, 0.02, 50, 50)?;
    let ops = if eq == Equation::ColoredCommuting {
        OperatorSet::qubit_sigma_z()
    } else {
        OperatorSet::new(Operator::pauli_x().scale(C64::new(0.5, 0.0)), vec![Operator::pauli_z()])?
    };
    let p = Propagator::new(eq, &ops, kernel, DriftMode::GeneralFromKernel, &g, Scheme::Rk4)?;
    let rep = p.self_convergence(&StateVector::uniform(2), 2000, 3)?;
    Ok((
        rep.order >= ORDER_THRESHOLD,
        format!("order {:.3} (errors {:.3e}, {:.3e}; threshold {ORDER_THRESHOLD})", rep.order, rep.errors[0], rep.errors[1]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untampered_items_pass_and_tampering_is_caught() {
        assert!(white_reduction(Tamper::None).unwrap().0);
        assert!(!white_reduction(Tamper::Endpoint).unwrap().0);
        assert!(rotated_real_realness(Tamper::None).unwrap().0);
        assert!(!rotated_real_realness(Tamper::CrossSign).unwrap().0);
        for f in [realizable_presets, invalid_pair_rejected, oversized_pseudo_covariance_rejected, asymmetric_delta_rejected, drift_table, furutsu_novikov_linear] {
            let (pass, detail) = f().unwrap();
            assert!(pass, "{detail}");
        }
    }
}
