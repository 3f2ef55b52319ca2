//! Benchmark scenarios: problem instance, default run configuration, derivative
//! sample points and scenario specific metrics.

use pgmpc::mpc::StateSelection;
use pgmpc::options::{IntegratorKind, SolverOptions};
use pgmpc::problem::{check_derivatives, DerivativeReport, Problem, ProblemDims, SamplePoint, Setpoint};

use crate::log::{RunOutput, TrajectoryLog};
use crate::problems::cstr::{OPERATING_POINTS, SECONDS_PER_UNIT};
use crate::problems::{dual_arm, BallOnPlate, Crane2d, Cstr, DoubleIntegrator, DualArm};
use crate::run::{options_with, run_mpc, run_mpc_mhe, run_ocp, RunError, SetpointChange};
use crate::scenario::{MheSettings, Scenario, ScenarioKind};

pub const BALL_ON_PLATE: &str = "ball-on-plate";
pub const CRANE2D: &str = "crane2d";
pub const DOUBLE_INTEGRATOR: &str = "double-integrator-shrinking";
pub const CSTR_MHE: &str = "cstr-mhe";
pub const DUAL_ARM: &str = "dual-arm-robot";

#[allow(clippy::too_many_arguments)]
fn scenario(
    name: &str,
    kind: ScenarioKind,
    x0: &[f64],
    x_des: &[f64],
    u_des: &[f64],
    horizon: f64,
    dt: f64,
    duration: f64,
    options: SolverOptions,
) -> Scenario {
    Scenario {
        name: name.into(),
        kind,
        x0: x0.to_vec(),
        x_des: x_des.to_vec(),
        u_des: u_des.to_vec(),
        horizon,
        dt,
        t_min: dt,
        duration,
        seed: 0,
        log_timing: false,
        log_substeps: 1,
        options,
        mhe: None,
    }
}

fn points(x: &[&[f64]], u: &[&[f64]], horizon: f64) -> Vec<SamplePoint> {
    x.iter()
        .zip(u)
        .enumerate()
        .map(|(k, (x, u))| SamplePoint {
            t: 0.1 * k as f64,
            horizon,
            x: x.to_vec(),
            u: u.to_vec(),
            p: vec![],
        })
        .collect()
}

/// First logged time from which the predicate holds, and first time it holds
/// until the end of the log.
fn reach_and_settle(log: &TrajectoryLog, inside: impl Fn(&[f64]) -> bool) -> (Option<f64>, Option<f64>) {
    let mut reach = None;
    let mut settle = None;
    for row in &log.rows {
        if inside(row) {
            reach.get_or_insert(row[0]);
            settle.get_or_insert(row[0]);
        } else {
            settle = None;
        }
    }
    (reach, settle)
}

fn insert_times(out: &mut RunOutput, prefix: &str, times: (Option<f64>, Option<f64>)) {
    let m = &mut out.metrics;
    match times.0 {
        Some(t) => {
            m.extra.insert(format!("{prefix}reach_time"), t);
        }
        None => m.flags.push("setpoint not reached".into()),
    }
    if let Some(t) = times.1 {
        m.extra.insert(format!("{prefix}settle_time"), t);
    }
}

// ball-on-plate

/// Multiplier updates gated at `η ≤ eps_rel_u` with gentle penalty
/// adaptation from a fixed floor. A few gradient iterations per sample never
/// reach the default update threshold.
fn real_time_updates(opts: &mut SolverOptions, c_floor: f64, eps_rel_u: f64) {
    opts.al.eps_rel_u = eps_rel_u;
    opts.al.beta_in = 1.05;
    opts.al.beta_de = 0.95;
    opts.al.c_init = c_floor;
    opts.al.c_min = c_floor;
}

pub fn ball_on_plate() -> Scenario {
    let mut opts = options_with(20, 3, 2);
    opts.integrator = IntegratorKind::Heun;
    // x0 violates x1 <= 0.01; slow penalty growth keeps the multipliers from saturating
    real_time_updates(&mut opts, 1e4, 1e-2);
    scenario(
        BALL_ON_PLATE,
        ScenarioKind::Mpc,
        &[0.1, 0.01],
        &[-0.2, 0.0],
        &[0.0],
        0.3,
        0.01,
        4.0,
        opts,
    )
}

/// Position tolerance of the reach criterion.
pub const BALL_REACH_TOL: f64 = 0.01;

pub fn run_ball_on_plate(sc: &Scenario) -> Result<RunOutput, RunError> {
    let pr = BallOnPlate::default();
    let target = sc.x_des[0];
    let mut out = run_mpc(pr.clone(), pr.bounds(), sc)?;
    let times = reach_and_settle(&out.log, |r| (r[1] - target).abs() < BALL_REACH_TOL);
    insert_times(&mut out, "", times);
    Ok(out)
}

pub fn check_ball_on_plate() -> DerivativeReport {
    let pr = BallOnPlate::default();
    let des = Setpoint::new(vec![-0.2, 0.0], vec![0.0]);
    let pts = points(&[&[0.1, 0.01], &[-0.05, -0.08], &[0.02, 0.1]], &[&[0.03], &[-0.05], &[0.0]], 0.3);
    check_derivatives(&pr, &pts, &des)
}

// crane2d

pub fn crane2d() -> Scenario {
    scenario(
        CRANE2D,
        ScenarioKind::Mpc,
        &[-2.0, 0.0, 2.0, 0.0, 0.0, 0.0],
        &[2.0, 0.0, 2.0, 0.0, 0.0, 0.0],
        &[0.0, 0.0],
        2.0,
        0.002,
        14.0,
        {
            let mut opts = options_with(20, 1, 2);
            real_time_updates(&mut opts, 1e2, 1e-2);
            opts
        },
    )
}

/// State tolerance of the crane setpoint criterion.
pub const CRANE_REACH_TOL: f64 = 0.05;

pub fn run_crane2d(sc: &Scenario) -> Result<RunOutput, RunError> {
    let pr = Crane2d::default();
    let mut out = run_mpc(pr.clone(), pr.bounds(), sc)?;
    let des = sc.x_des.clone();
    let times = reach_and_settle(&out.log, |r| {
        des.iter().enumerate().all(|(i, d)| (r[1 + i] - d).abs() < CRANE_REACH_TOL)
    });
    insert_times(&mut out, "", times);
    let worst = out
        .log
        .rows
        .iter()
        .map(|r| pr.obstacle(&r[1..7]))
        .fold(f64::NEG_INFINITY, f64::max);
    out.metrics.extra.insert("max_obstacle_violation".into(), worst.max(0.0));
    Ok(out)
}

pub fn check_crane2d() -> DerivativeReport {
    let pr = Crane2d::default();
    let des = Setpoint::new(vec![2.0, 0.0, 2.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]);
    let pts = points(
        &[
            &[-2.0, 0.1, 2.0, 0.0, 0.05, 0.0],
            &[-0.5, 0.8, 1.4, -0.3, -0.2, 0.25],
            &[1.0, -0.4, 1.8, 0.2, 0.3, -0.1],
        ],
        &[&[1.0, -0.5], &[-1.5, 0.3], &[0.2, 1.9]],
        2.0,
    );
    check_derivatives(&pr, &pts, &des)
}

// double integrator with shrinking horizon

pub fn double_integrator_shrinking() -> Scenario {
    let mut opts = options_with(40, 1, 2);
    opts.optim_time = true;
    real_time_updates(&mut opts, 1.0, 1.0);
    let mut sc = scenario(
        DOUBLE_INTEGRATOR,
        ScenarioKind::ShrinkingMpc,
        &[-1.0, -1.0],
        &[0.0, 0.0],
        &[0.0],
        6.0,
        0.001,
        10.0,
        opts,
    );
    sc.t_min = 0.1;
    sc
}

pub fn run_double_integrator(sc: &Scenario) -> Result<RunOutput, RunError> {
    let pr = DoubleIntegrator::default();
    let mut out = run_mpc(pr.clone(), pr.bounds(), sc)?;
    if let Some(slope) = horizon_slope(&out.log, 0.1) {
        out.metrics.extra.insert("horizon_slope".into(), slope);
    }
    Ok(out)
}

/// Least-squares slope of the logged horizon over time, skipping the first
/// `skip` fraction of the sampled rows and the final row.
pub fn horizon_slope(log: &TrajectoryLog, skip: f64) -> Option<f64> {
    let t = log.column("t")?;
    let h = log.column("T")?;
    let n = t.len().checked_sub(1)?;
    let start = (skip * n as f64).ceil() as usize;
    let (ts, hs) = (&t[start..n], &h[start..n]);
    if ts.len() < 2 {
        return None;
    }
    let m = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / m;
    let hm = hs.iter().sum::<f64>() / m;
    let sxy: f64 = ts.iter().zip(hs).map(|(a, b)| (a - tm) * (b - hm)).sum();
    let sxx: f64 = ts.iter().map(|a| (a - tm) * (a - tm)).sum();
    Some(sxy / sxx)
}

pub fn check_double_integrator() -> DerivativeReport {
    let pr = DoubleIntegrator::default();
    let des = Setpoint::new(vec![0.0, 0.0], vec![0.0]);
    let pts = points(&[&[-1.0, -1.0], &[0.3, 0.7]], &[&[1.0], &[-0.4]], 3.5);
    check_derivatives(&pr, &pts, &des)
}

// dual arm robot

pub fn dual_arm_robot() -> Scenario {
    let mut opts = options_with(101, 3000, 1000);
    opts.al.eps_rel_c = 1e-5;
    opts.al.constraints_abs_tol = vec![1e-3];
    scenario(
        DUAL_ARM,
        ScenarioKind::Ocp,
        &dual_arm::X0,
        &dual_arm::X_FINAL,
        &[0.0; 6],
        10.0,
        10.0,
        10.0,
        opts,
    )
}

pub fn run_dual_arm(sc: &Scenario) -> Result<RunOutput, RunError> {
    let pr = DualArm::default();
    run_ocp(pr.clone(), pr.bounds(), sc)
}

pub fn check_dual_arm() -> DerivativeReport {
    let pr = DualArm::default();
    let des = Setpoint::new(dual_arm::X_FINAL.to_vec(), vec![0.0; 6]);
    let pts = points(
        &[&dual_arm::X0, &[0.3, -0.4, 0.9, -1.1, 0.2, 0.5]],
        &[&[0.1, -0.2, 0.3, -0.4, 0.5, -0.6], &[1.0; 6]],
        10.0,
    );
    check_derivatives(&pr, &pts, &des)
}

// CSTR with moving horizon estimation

/// Offsets of the estimator's initial guess from the true initial state.
pub const CSTR_ESTIMATE_OFFSET: [f64; 4] = [100.0, 100.0, 5.0, -7.0];
/// Samples excluded from the estimation error statistics.
pub const CSTR_TRANSIENT_SAMPLES: usize = 20;
/// Time between setpoint switches.
pub const CSTR_SWITCH_PERIOD: f64 = 900.0 / SECONDS_PER_UNIT;

pub fn cstr_mhe() -> Scenario {
    let (x_a, _) = OPERATING_POINTS[0];
    let (x_b, u_b) = OPERATING_POINTS[1];
    let mut sc = scenario(
        CSTR_MHE,
        ScenarioKind::MpcMhe,
        &x_a,
        &x_b,
        &u_b,
        1200.0 / SECONDS_PER_UNIT,
        1.0 / SECONDS_PER_UNIT,
        3600.0 / SECONDS_PER_UNIT,
        options_with(40, 1, 3),
    );
    sc.seed = 1;
    let mut mhe = options_with(10, 1, 1);
    // short steps filter the measurement noise across samples
    mhe.line_search.max = 3e-4;
    mhe.line_search.init = 1.5e-4;
    sc.mhe = Some(MheSettings {
        window: 10.0 / SECONDS_PER_UNIT,
        noise_std: 4.0,
        options: mhe,
    });
    sc
}

pub fn run_cstr(sc: &Scenario) -> Result<RunOutput, RunError> {
    let pr = Cstr::default();
    let first = Setpoint::new(sc.x_des.clone(), sc.u_des.clone());
    let (x_a, u_a) = OPERATING_POINTS[0];
    let other = Setpoint::new(x_a.to_vec(), u_a.to_vec());
    let mut schedule = Vec::new();
    let mut k = 0;
    while k as f64 * CSTR_SWITCH_PERIOD < sc.duration {
        let sp = if k % 2 == 0 { first.clone() } else { other.clone() };
        schedule.push(SetpointChange { at: k as f64 * CSTR_SWITCH_PERIOD, setpoint: sp });
        k += 1;
    }
    let guess: Vec<f64> = sc.x0.iter().zip(CSTR_ESTIMATE_OFFSET).map(|(x, o)| x + o).collect();
    let output = StateSelection { indices: vec![2, 3] };
    let scale = vec![1000.0, 1000.0, 100.0, 100.0];
    let mut out = run_mpc_mhe(pr.clone(), pr.bounds(), output, sc, &guess, scale, &schedule)?;
    estimation_metrics(&mut out);
    Ok(out)
}

/// Mean absolute estimation errors after the transient, absolute and relative
/// to each state's largest magnitude.
fn estimation_metrics(out: &mut RunOutput) {
    let log = &out.log;
    let rows = &log.rows[CSTR_TRANSIENT_SAMPLES.min(log.rows.len())..];
    if rows.is_empty() {
        return;
    }
    for i in 0..4 {
        let (Some(kx), Some(kh)) = (
            log.header.iter().position(|h| *h == format!("x{i}")),
            log.header.iter().position(|h| *h == format!("xhat{i}")),
        ) else {
            return;
        };
        let mean = rows.iter().map(|r| (r[kh] - r[kx]).abs()).sum::<f64>() / rows.len() as f64;
        let peak = log.rows.iter().map(|r| r[kx].abs()).fold(0.0, f64::max);
        out.metrics.extra.insert(format!("mean_abs_err_x{i}"), mean);
        out.metrics.extra.insert(format!("rel_err_x{i}"), mean / peak);
    }
    let e = &out.metrics.extra;
    let temp = 0.5 * (e["mean_abs_err_x2"] + e["mean_abs_err_x3"]);
    out.metrics.extra.insert("mean_abs_temp_err".into(), temp);
}

pub fn check_cstr() -> DerivativeReport {
    let pr = Cstr::default();
    let (x_a, u_a) = OPERATING_POINTS[0];
    let (x_b, u_b) = OPERATING_POINTS[1];
    let des = Setpoint::new(x_b.to_vec(), u_b.to_vec());
    let pts = points(&[&x_a, &x_b, &[1500.0, 800.0, 120.0, 90.0]], &[&u_a, &u_b, &[20.0, -4000.0]], 1.0 / 3.0);
    check_derivatives(&pr, &pts, &des)
}

/// Catalog entry of a built-in scenario.
pub struct Entry {
    pub name: &'static str,
    pub description: &'static str,
    pub dims: fn() -> ProblemDims,
    pub scenario: fn() -> Scenario,
    pub run: fn(&Scenario) -> Result<RunOutput, RunError>,
    pub check: fn() -> DerivativeReport,
}

pub static BUILTIN: [Entry; 5] = [
    Entry {
        name: BALL_ON_PLATE,
        description: "linear ball-on-plate axis with state box constraints",
        dims: || BallOnPlate::default().dims(),
        scenario: ball_on_plate,
        run: run_ball_on_plate,
        check: check_ball_on_plate,
    },
    Entry {
        name: CRANE2D,
        description: "gantry crane moving a load over an obstacle",
        dims: || Crane2d::default().dims(),
        scenario: crane2d,
        run: run_crane2d,
        check: check_crane2d,
    },
    Entry {
        name: DOUBLE_INTEGRATOR,
        description: "time-optimal double integrator, shrinking horizon",
        dims: || DoubleIntegrator::default().dims(),
        scenario: double_integrator_shrinking,
        run: run_double_integrator,
        check: check_double_integrator,
    },
    Entry {
        name: CSTR_MHE,
        description: "reactor MPC on moving horizon estimates from noisy temperatures (time in hours)",
        dims: || Cstr::default().dims(),
        scenario: cstr_mhe,
        run: run_cstr,
        check: check_cstr,
    },
    Entry {
        name: DUAL_ARM,
        description: "dual arm robot with closed kinematic chain, single OCP",
        dims: || DualArm::default().dims(),
        scenario: dual_arm_robot,
        run: run_dual_arm,
        check: check_dual_arm,
    },
];

pub fn find(name: &str) -> Option<&'static Entry> {
    BUILTIN.iter().find(|e| e.name == name)
}
