use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn flowlin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}\nstdout: {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SINGLE_PINCH: &str = r#"{"n": 2, "m": 1, "M": [0, 1], "S": [[["0", "1"]]], "C": [[[["0", "0"]]], []]}"#;

#[test]
fn catalog_list_and_show() {
    let out = flowlin(&["catalog", "list"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let names: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert_eq!(names.len(), 10);
    assert!(names.contains(&"annulus_cubic"));

    let out = flowlin(&["catalog", "show", "log_radial"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["embedding_dim"], 4);
    assert_eq!(code(&flowlin(&["catalog", "show", "nope"])), 2);
}

#[test]
fn verify_exact_and_built() {
    let out = flowlin(&[
        "verify",
        "--system",
        "log_radial",
        "--embedding",
        "exact",
        "--samples",
        "200",
        "--tmax",
        "10",
        "--tol",
        "1e-6",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert!(v["result"]["residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(v["pass"], true);
    for c in v["checks"].as_array().unwrap() {
        assert!(c["threshold"].is_number(), "{c}");
    }

    let out = flowlin(&["verify", "--system", "annulus_cubic", "--embedding", "built"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no asymptotic phase map"));

    // A tolerance below the achievable residual is a check failure.
    let out = flowlin(&[
        "verify",
        "--system",
        "saddle_plane",
        "--samples",
        "20",
        "--tol",
        "1e-30",
    ]);
    assert_eq!(code(&out), 1);
    assert_eq!(json(&out)["pass"], false);
}

#[test]
fn build_smooth() {
    let out = flowlin(&[
        "build",
        "--system",
        "log_radial",
        "--mode",
        "smooth",
        "--samples",
        "200",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["result"]["provenance"], "built_smooth");
    assert!(v["result"]["diagnostics"]["overlap_max"].as_f64().unwrap() <= 1e-7);
    assert_eq!(code(&flowlin(&["build", "--system", "klein_bottle"])), 2);
}

#[test]
fn phase_converges_and_diverges() {
    let out = flowlin(&[
        "phase",
        "--system",
        "log_radial",
        "--x",
        "2.0,0.3",
        "--schedule",
        "geometric:1,2,8",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        json(&out)["result"]["estimate"]["classification"]["status"],
        "converged"
    );

    let out = flowlin(&["phase", "--system", "annulus_cubic", "--x", "1.5,0"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["result"]["estimate"]["classification"]["status"], "diverged");

    let out = flowlin(&[
        "phase",
        "--system",
        "annulus_cubic",
        "--x",
        "1.5,0",
        "--schedule",
        "linear:1",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn index_verdict_certify() {
    let out = flowlin(&["index", "--system", "sphere_rotation", "--equilibrium", "0,0,-1"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["result"]["report"]["index"], 1);
    let out = flowlin(&[
        "index",
        "--system",
        "saddle_plane",
        "--equilibrium",
        "0,0",
        "--radius",
        "0.5",
        "--samples",
        "1e3",
    ]);
    assert_eq!(json(&out)["result"]["report"]["index"], -1);

    let out = flowlin(&["verdict", "--system", "sphere_rotation"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["result"]["verdict"]["conclusion"], "no_obstruction_found");
    assert_eq!(code(&flowlin(&["verdict", "--system", "annulus_cubic"])), 2);

    let out = flowlin(&[
        "certify",
        "--system",
        "quasiperiodic_torus_2",
        "--omega",
        "1,sqrt(2)",
        "--Q",
        "50",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["result"]["verdict"]["conclusion"], "certified_linearizable");
    let out = flowlin(&[
        "certify",
        "--system",
        "quasiperiodic_torus_2",
        "--omega",
        "1,2",
        "--Q",
        "50",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn pinched_check_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", SINGLE_PINCH);
    let out = flowlin(&["pinched", "--spec", &spec, "--check", "--samples", "300"]);
    assert_eq!(code(&out), 0);
    assert_eq!(json(&out)["result"]["report"]["quotient_max"], 0.0);

    let x0 = write(dir.path(), "x0.json", r#"{"theta": [0.1, 0.5]}"#);
    let csv = dir.path().join("orbit.csv");
    let out = flowlin(&[
        "pinched",
        "--spec",
        &spec,
        "--emit-trajectory",
        &x0,
        "--tmax",
        "50",
        "--points",
        "1e3",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1001);
    assert_eq!(lines[0], "t,y1,y2,y3,y4,y5,y6");
    assert!(lines.iter().all(|l| l.split(',').count() == 7));

    let empty = flowlin(&["pinched", "--spec", &spec, "--emit-trajectory", &x0, "--points", "0"]);
    assert_eq!(String::from_utf8_lossy(&empty.stdout).lines().count(), 1);

    let outside = write(dir.path(), "bad.json", r#"{"theta": [0.1, 0.5]}"#);
    let proper = write(
        dir.path(),
        "proper.json",
        r#"{"n": 2, "m": 1, "M": [0, 1], "S": [[["0", "1/4"]]], "C": [[], []]}"#,
    );
    assert_eq!(
        code(&flowlin(&["pinched", "--spec", &proper, "--emit-trajectory", &outside])),
        2
    );
    assert_eq!(code(&flowlin(&["pinched", "--spec", &spec])), 2);
}

#[test]
fn edmd_dichotomy() {
    let out = flowlin(&[
        "edmd",
        "--system",
        "quasiperiodic_torus_2",
        "--dict",
        "fourier:1",
        "--pairs",
        "500",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert!(v["result"]["diagnosis"]["holdout_residual"].as_f64().unwrap() <= 1e-7);
    assert!(v["result"]["diagnosis"]["expected_failure"].is_null());

    let out = flowlin(&[
        "edmd",
        "--system",
        "annulus_cubic",
        "--dict",
        "fourier:3",
        "--pairs",
        "400",
    ]);
    assert_eq!(code(&out), 0);
    let f = &json(&out)["result"]["diagnosis"]["expected_failure"];
    assert_eq!(f["label"], "EXPECTED");
    assert_eq!(f["phase_certificate"]["classification"]["status"], "diverged");

    assert_eq!(
        code(&flowlin(&["edmd", "--system", "log_radial", "--dict", "wavelet:2"])),
        2
    );
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&flowlin(&["verify", "--system", "log_radial", "--bogus"])), 2);
    assert_eq!(
        code(&flowlin(&["verify", "--system", "log_radial", "--samples", "2.5"])),
        2
    );
    assert_eq!(code(&flowlin(&[])), 2);
}

#[test]
fn thread_cap_does_not_change_output() {
    let args = [
        "edmd",
        "--system",
        "quasiperiodic_torus_2",
        "--pairs",
        "200",
        "--seed",
        "3",
    ];
    let one = Command::new(env!("CARGO_BIN_EXE_flowlin"))
        .args(args)
        .env("FLOWLIN_THREADS", "1")
        .output()
        .unwrap();
    let many = flowlin(&args);
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, many.stdout);
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", SINGLE_PINCH);
    let x0 = write(dir.path(), "x0.json", r#"{"theta": [0.3, 0.25]}"#);
    let runs: Vec<Vec<&str>> = vec![
        vec!["catalog", "list"],
        vec!["verify", "--system", "klein_bottle", "--samples", "100", "--seed", "7"],
        vec!["build", "--system", "log_radial", "--samples", "100", "--seed", "7"],
        vec!["phase", "--system", "annulus_cubic", "--x", "0.5,1"],
        vec!["index", "--system", "sphere_rotation", "--equilibrium", "0,0,1"],
        vec!["verdict", "--system", "klein_bottle"],
        vec![
            "certify",
            "--system",
            "quasiperiodic_torus_3",
            "--omega",
            "1,sqrt(2),sqrt(3)",
            "--Q",
            "10",
            "--seed",
            "7",
        ],
        vec!["pinched", "--spec", &spec, "--check", "--samples", "200", "--seed", "7"],
        vec!["pinched", "--spec", &spec, "--emit-trajectory", &x0, "--points", "100"],
        vec![
            "edmd",
            "--system",
            "annulus_cubic",
            "--dict",
            "fourier:2",
            "--pairs",
            "300",
            "--seed",
            "7",
        ],
    ];
    for args in runs {
        let a = flowlin(&args);
        let b = flowlin(&args);
        assert!(!a.stdout.is_empty(), "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}
