use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sselab::cli::{
    bundled_scenario, compare_results, load_scenario, parse_scenario, resolve_output_dir, run_scenario, RunOptions,
    BUNDLED,
};
use sselab::error::Error;

fn sselab(args: &[&str], envs: &[(&str, &Path)], cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sselab"));
    cmd.args(args).current_dir(cwd).env_remove("SSELAB_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn every_bundled_scenario_parses() {
    for (name, _) in BUNDLED {
        let cfg = bundled_scenario(name).unwrap().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(&cfg.name, name);
        assert!(!cfg.runs.is_empty() && !cfg.comparisons.is_empty());
    }
    assert!(bundled_scenario("no_such_scenario").is_none());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let args = |out: &Path, threads: &str| {
        vec![
            "--threads".to_string(),
            threads.to_string(),
            "--trajectories".into(),
            "150".into(),
            "run".into(),
            "white_equivalence".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let argv = args(out, threads);
        let refs: Vec<&str> = argv.iter().map(String::as_str).collect();
        let o = sselab(&refs, &[], tmp.path());
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    }
    let fa = files(&a);
    assert!(fa.iter().any(|(n, _)| n == "manifest.json"));
    assert!(fa.iter().any(|(n, _)| n == "circular.csv"));
    assert_eq!(fa, files(&b));
}

#[test]
fn seed_override_changes_results_and_is_recorded() {
    let cfg = bundled_scenario("imaginary_unitary").unwrap().unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let run = |seed: u64, dir: &str| {
        let opts = RunOptions { seed: Some(seed), trajectories: Some(50), out_dir: Some(tmp.path().join(dir)) };
        run_scenario(&cfg, &opts).unwrap()
    };
    let r1 = run(7, "s7");
    let r2 = run(8, "s8");
    assert_eq!(r1.seed, 7);
    assert_eq!(r1.trajectories, 50);
    let csv = |d: &str| fs::read(tmp.path().join(d).join("imaginary.csv")).unwrap();
    assert_ne!(csv("s7"), csv("s8"));
    assert_ne!(r1.to_text(), r2.to_text());
    let manifest = fs::read_to_string(tmp.path().join("s7").join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
}

#[test]
fn output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let o = sselab(&["--trajectories", "20", "run", "imaginary_unitary"], &[("SSELAB_OUT", &root)], tmp.path());
    assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    assert!(root.join("imaginary_unitary").join("report.json").exists());

    // --out wins over the environment
    let explicit = tmp.path().join("explicit");
    let o = sselab(
        &["--trajectories", "20", "--out", explicit.to_str().unwrap(), "run", "imaginary_unitary"],
        &[("SSELAB_OUT", &root)],
        tmp.path(),
    );
    assert!(o.status.code().is_some_and(|c| c <= 1));
    assert!(explicit.join("report.txt").exists());

    let cfg = bundled_scenario("imaginary_unitary").unwrap().unwrap();
    let dir = resolve_output_dir(&cfg, &RunOptions { out_dir: Some(explicit.clone()), ..Default::default() });
    assert_eq!(dir, explicit);
}

#[test]
fn scenario_file_runs_and_reports_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("dephasing.toml");
    fs::write(
        &path,
        r#"
name = "dephasing"

[system]
preset = "qubit_sigma_z"

[grid]
dt = 2e-3
t_final = 0.5
stride = 50

[ensemble]
trajectories = 400
seed = 3

[output]
dir = "results"

[[runs]]
name = "lindblad"
equation = "lindblad_reference"

[[runs]]
name = "circular"
equation = "linear_white"
reference = "lindblad"

[[comparisons]]
kind = "agreement"
run = "circular"
other = "lindblad"
"#,
    )
    .unwrap();
    let o = sselab(&["run", path.to_str().unwrap()], &[], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("agreement:circular~lindblad"));
    assert!(stdout(&o).contains("result: PASS"));
    // output.dir is resolved against the scenario file
    let out = tmp.path().join("results");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], serde_json::Value::Bool(true));
    assert_eq!(report["comparisons"][0]["kind"], "agreement");

    // compare verb on the written artifacts
    let (a, b) = (out.join("circular.csv"), out.join("lindblad.csv"));
    let ok = sselab(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--tol", "0.2"], &[], tmp.path());
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("PASS max D"));
    let tight = sselab(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--tol", "1e-9"], &[], tmp.path());
    assert_eq!(tight.status.code(), Some(1));
    assert!(stdout(&tight).contains("FAIL"));
    let same = compare_results(&a, &a, 0.0).unwrap();
    assert!(same.pass && same.max_distance == 0.0);
}

#[test]
fn compare_rejects_mismatched_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    fs::write(&a, "t,rho_0_0_re,rho_0_0_im,rho_0_1_re,rho_0_1_im,rho_1_1_re,rho_1_1_im\n0,1,0,0,0,0,0\n1,1,0,0,0,0,0\n").unwrap();
    fs::write(&b, "t,rho_0_0_re,rho_0_0_im,rho_0_1_re,rho_0_1_im,rho_1_1_re,rho_1_1_im\n0,1,0,0,0,0,0\n0.5,1,0,0,0,0,0\n").unwrap();
    assert!(matches!(compare_results(&a, &b, 0.1), Err(Error::GridMismatch(_))));
    let o = sselab(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--tol", "0.1"], &[], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_scenarios_exit_2_with_field_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(
        &path,
        "name = \"bad\"\n\n[system]\npreset = \"qubit_sigma_z\"\n\n[[runs]]\nname = \"x\"\nequation = \"lindblad\"\n",
    )
    .unwrap();
    let o = sselab(&["run", path.to_str().unwrap()], &[], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("runs[0].equation"), "{err}");
    assert!(err.contains("line 8"), "{err}");
    assert!(err.contains("lindblad_reference"), "{err}");

    let err = parse_scenario(&path).unwrap_err();
    assert_eq!(err.violations.len(), 1);
    assert!(load_scenario(tmp.path().join("missing.toml").to_str().unwrap()).is_err());
}

#[test]
fn selfcheck_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sselab(&["selfcheck"], &[], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("convergence slope: guided_white, real"));
    assert!(!out.contains("FAIL"));
}
