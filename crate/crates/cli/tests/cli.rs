use std::fs;
use std::path::Path;

use pgmpc::problem::{check_derivatives, HookSet, Problem, ProblemDims, SamplePoint, Setpoint};
use pgmpc_cli::{main_with, report_lines, CHECK_TOL, EXIT_CONFIG, EXIT_OK};

fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("pgmpc").chain(args.iter().copied());
    let code = main_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_log_metrics_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) =
        run(&["run", "ball-on-plate", "--set", "MaxGradIter=2", "--set", "Tsim=0.5", "--out", path(dir.path())]);
    assert_eq!(code, EXIT_OK, "{err}");
    let csv = fs::read_to_string(dir.path().join("ball-on-plate.csv")).unwrap();
    assert!(csv.starts_with("# scenario=ball-on-plate"), "{csv}");
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ball-on-plate.metrics.json")).unwrap()).unwrap();
    assert!(metrics.is_object());
    assert!(out.contains("j_int"), "{out}");
    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ball-on-plate.config.json")).unwrap()).unwrap();
    assert_eq!(config["MaxGradIter"].as_f64(), Some(2.0));
}

#[test]
fn unknown_option_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(&["run", "ball-on-plate", "--set", "BogusKey=1", "--out", path(dir.path())]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("BogusKey"), "{err}");
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let (code, _, err) = run(&["check", "no-such-scenario"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("no-such-scenario"), "{err}");
}

#[test]
fn dumped_config_reproduces_the_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (code, _, err) =
        run(&["run", "crane2d", "--set", "Tsim=0.3", "--set", "MaxGradIter=3", "--seed", "9", "--out", path(a.path())]);
    assert_eq!(code, EXIT_OK, "{err}");
    let config = a.path().join("crane2d.config.json");
    let (code, _, err) = run(&["run", "crane2d", "--config", path(&config), "--out", path(b.path())]);
    assert_eq!(code, EXIT_OK, "{err}");
    for file in ["crane2d.csv", "crane2d.config.json"] {
        assert_eq!(
            fs::read_to_string(a.path().join(file)).unwrap(),
            fs::read_to_string(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn list_json_names_every_scenario() {
    let (code, out, _) = run(&["list", "--json"]);
    assert_eq!(code, EXIT_OK);
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    let names: Vec<&str> = doc.as_array().unwrap().iter().map(|e| e["name"].as_str().unwrap()).collect();
    for name in ["ball-on-plate", "crane2d", "double-integrator-shrinking", "cstr-mhe", "dual-arm-robot"] {
        assert!(names.contains(&name), "{names:?}");
    }
    assert_eq!(doc[0]["dims"]["nx"], serde_json::json!(2));
}

#[test]
fn check_passes_builtin_and_marks_parameter_hooks() {
    let (code, out, err) = run(&["check", "ball-on-plate", "crane2d"]);
    assert_eq!(code, EXIT_OK, "{out}{err}");
    let dfdp = out.lines().find(|l| l.trim_start().starts_with("dfdp")).expect(&out);
    assert!(dfdp.contains("not applicable"), "{dfdp}");
}

/// `ẋ = −x + u`, `l = x² + u²` with `∂l/∂x` off by a factor of two.
struct WrongDldx;

impl Problem for WrongDldx {
    fn dims(&self) -> ProblemDims {
        ProblemDims::new(1, 1)
    }
    fn hooks(&self) -> HookSet {
        HookSet::F | HookSet::DFDX_MULT | HookSet::DFDU_MULT | HookSet::L | HookSet::DLDX | HookSet::DLDU
    }
    fn f(&self, out: &mut [f64], _t: f64, x: &[f64], u: &[f64], _p: &[f64]) {
        out[0] = -x[0] + u[0];
    }
    fn dfdx_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
        out[0] = -v[0];
    }
    fn dfdu_mult(&self, out: &mut [f64], _t: f64, _x: &[f64], _u: &[f64], _p: &[f64], v: &[f64]) {
        out[0] = v[0];
    }
    fn l(&self, _t: f64, x: &[f64], u: &[f64], _p: &[f64], _des: &Setpoint) -> f64 {
        x[0] * x[0] + u[0] * u[0]
    }
    fn dldx(&self, out: &mut [f64], _t: f64, x: &[f64], _u: &[f64], _p: &[f64], _des: &Setpoint) {
        out[0] = 4.0 * x[0];
    }
    fn dldu(&self, out: &mut [f64], _t: f64, _x: &[f64], u: &[f64], _p: &[f64], _des: &Setpoint) {
        out[0] = 2.0 * u[0];
    }
}

#[test]
fn faulty_hook_is_named() {
    let pr = WrongDldx;
    let pt = SamplePoint { t: 0.1, horizon: 1.0, x: vec![0.7], u: vec![-0.3], p: vec![] };
    let report = check_derivatives(&pr, &[pt], &Setpoint::zeros(&pr.dims()));
    let mut out = Vec::new();
    let failed = report_lines(&report, CHECK_TOL, &mut out);
    assert_eq!(failed, vec!["dldx"]);
    let text = String::from_utf8(out).unwrap();
    assert!(text.lines().any(|l| l.contains("dldx") && l.contains("FAIL")), "{text}");
}
