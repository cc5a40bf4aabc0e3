//! Binary-level contract: exit codes, config diagnostics with line numbers,
//! the dry-run description, and rerunning from a resolved config.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use snse_core::noise::{RKHSSpec, SigmaLaw};
use snse_core::ou::select_alpha;
use snse_core::spectral::nonlinear::estimate_universal_constants;
use snse_core::spectral::DomainSpec;

fn snse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snse"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn config_errors_name_their_line() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.cfg");
    fs::write(&bad, "noise.c = 1.0\n\nnoise.bogus = 3\n").unwrap();
    let out = snse(&["describe", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("line 3") && err.contains("unknown key"), "{err}");

    let dup = tmp.path().join("dup.cfg");
    fs::write(&dup, "noise.c = 1.0\nnoise.c = 2.0\n").unwrap();
    let out = snse(&["describe", "--config", dup.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(err.contains("line 2") && err.contains("duplicate"), "{err}");
}

#[test]
fn unknown_override_is_rejected() {
    let out = snse(&["describe", "--set", "bogus.key=1"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("unknown key"), "{}", stderr(&out));
}

#[test]
fn describe_reports_spectrum_and_damping() {
    let out = snse(&["describe"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("lambda_1 = 19.739208802179"), "{text}");
    assert!(text.contains("assumption A1: PASS"), "{text}");

    // The printed damping must match a direct selection with the same
    // inputs the binary resolves: default law, constants and seed.
    let d = DomainSpec::unit_square(16, 1.0).unwrap();
    let spec = RKHSSpec {
        law: SigmaLaw::PowerLaw { c: 2.0, gamma: 1.0 },
        delta: 0.25,
        xi: 0.3,
    };
    let consts = estimate_universal_constants(&d, 1000, 7).unwrap();
    let alpha = select_alpha(&d, &spec.sigmas(&d).unwrap(), &consts, 2000, 42).unwrap();
    assert!(text.contains(&format!("alpha = {alpha} (auto)")), "{text}");
}

#[test]
fn describe_flags_inadmissible_noise() {
    let out = snse(&[
        "describe",
        "--set",
        "noise.gamma=0.2",
        "--set",
        "noise.delta=0.1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("assumption A1: FAIL"), "{}", stdout(&out));
}

#[test]
fn reference_scheme_rejects_incompatible_step() {
    let out = snse(&["simulate", "--set", "solver.scheme=rk4-reference"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("even"), "{}", stderr(&out));
}

#[test]
fn verdict_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("blowup");
    let out = snse(&[
        "classR",
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "noise.c=2000",
        "--set",
        "ou.alpha=0",
        "--set",
        "experiment.seeds=1",
        "--set",
        "experiment.horizon=5",
    ]);
    assert_eq!(code(&out), 2);
    let rows = fs::read_to_string(dir.join("classr.csv")).unwrap();
    assert!(rows.contains("false"), "{rows}");
}

#[test]
fn resolved_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let out = snse(&["validate", "--out", a.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let b = tmp.path().join("b");
    let out = snse(&[
        "validate",
        "--config",
        a.join("resolved.cfg").to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let read = |dir: &Path| fs::read(dir.join("checks.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}
