//! Acceptance suite. Every test prints one PASS/FAIL line for its criterion.

use std::f64::consts::PI;
use std::sync::Arc;

use bangbang::conditions::{audit_growth_with, GrowthParams};
use bangbang::control::{negative_norm_surrogate, project_pi_h, CellBounds, ControlField};
use bangbang::fem::FeFunction;
use bangbang::harness::cli::compare_with_oracle;
use bangbang::harness::eoc::{
    eoc_study, fit_slope, fixed_control_study, projection_errors, Scheme,
};
use bangbang::harness::manufactured::{
    make_degenerate, make_manufactured, ManufacturedProblem, Variant,
};
use bangbang::mesh::{Mesh, Point};
use bangbang::objective::{eval_j, eval_j_prime, eval_j_prime_linearized, eval_j_second};
use bangbang::optimizer::{frank_wolfe, SolveConfig};
use bangbang::perturbation::{stability_sweep, state_sensitivity_ratio, Family};
use bangbang::semilinear::{Discretization, ScalarField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LEVELS: [usize; 5] = [8, 16, 32, 64, 128];
/// Gap constant c_gap of the schedule c_gap h^2.
const C_GAP: f64 = 1e-6;

const C1_REFERENCE: usize = 256;
const C1_ORDER: f64 = 2.0;
const C1_TOL: f64 = 0.15;
const C2_MIN_ORDER: f64 = 0.85;
const C2_PAIRS: usize = 3;
const C3_MIN_SLOPE: f64 = 0.85;
const C4_WINDOW: (f64, f64) = (0.35, 0.65);
const C5_MIN_SLOPE: f64 = 0.85;
const C5_LEVEL: usize = 64;
const C5_POINTS: usize = 13;
const C6_PAIRS: usize = 20;
const C6_LEVELS: [usize; 2] = [16, 32];
const C6_STABILITY: f64 = 0.10;
const C7_FD_EPS: f64 = 1e-5;
const C7_FD_TOL: f64 = 1e-5;
const C7_SD_EPS: f64 = 1e-3;
const C7_SD_TOL: f64 = 1e-3;
const C7_DUAL_TOL: f64 = 1e-9;
const C7_PAIRS: usize = 20;
const C8_GRID: usize = 21;
const C9_SAMPLES: usize = 500;
const C9_SEED: u64 = 7;
const C9_LEVEL: usize = 32;
const C9_DETECTION: f64 = 1e-3;
const C10_MIN_ORDER: f64 = 0.85;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!(
        "{} criterion {id} ({name}): {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

fn gamma1() -> ManufacturedProblem {
    make_manufactured(1.0, Variant::Tracking).unwrap()
}

fn eoc_config() -> SolveConfig {
    SolveConfig::default()
}

#[test]
fn c01_fixed_control_state_convergence() {
    let mp = gamma1();
    let controls: Vec<ScalarField> = vec![
        mp.u_bar.clone(),
        Arc::new(|x: Point| 0.8 * (PI * x[0]).sin() * (2.0 * PI * x[1]).cos()),
        Arc::new(|x: Point| 0.5 - x[0] * x[1]),
    ];
    let study = fixed_control_study(&mp, &controls, &LEVELS, C1_REFERENCE).unwrap();
    let pass = study.slopes.iter().all(|s| (s - C1_ORDER).abs() <= C1_TOL);
    report(
        1,
        "fixed-control state order",
        pass,
        format!("slopes {:?}, required {C1_ORDER} +- {C1_TOL}", study.slopes),
    );
    assert!(pass);
}

#[test]
fn c02_full_discretization_rate() {
    let table = eoc_study(&gamma1(), Scheme::Full, &LEVELS, &eoc_config(), Some(C_GAP)).unwrap();
    let (oc, os) = (
        table.min_control_order_last(C2_PAIRS),
        table.min_state_order_last(C2_PAIRS),
    );
    let pass = oc >= C2_MIN_ORDER && os >= C2_MIN_ORDER && table.rows.iter().all(|r| r.converged);
    report(2, "full scheme rate", pass, format!("min control order {oc:.3}, min state order {os:.3} over last {C2_PAIRS} pairs, required >= {C2_MIN_ORDER}"));
    assert!(pass);
}

#[test]
fn c03_variational_rate() {
    let table = eoc_study(
        &gamma1(),
        Scheme::Variational,
        &LEVELS,
        &eoc_config(),
        Some(C_GAP),
    )
    .unwrap();
    let s = table.slope_control_log;
    let pass = s >= C3_MIN_SLOPE && table.rows.iter().all(|r| r.converged);
    report(
        3,
        "variational rate",
        pass,
        format!(
            "slope {s:.3} against (h|log h|)^2 (raw {:.3}), required >= {C3_MIN_SLOPE}",
            table.slope_control
        ),
    );
    assert!(pass);
}

#[test]
fn c04_holder_case() {
    let mp = make_manufactured(0.5, Variant::Tracking).unwrap();
    let table = eoc_study(&mp, Scheme::Full, &LEVELS, &eoc_config(), Some(C_GAP)).unwrap();
    let s = table.slope_control;
    let pass = s >= C4_WINDOW.0 && s <= C4_WINDOW.1 && table.rows.iter().all(|r| r.converged);
    let orders: Vec<f64> = table.rows.iter().filter_map(|r| r.order_control).collect();
    report(
        4,
        "Hölder case",
        pass,
        format!(
            "control slope {s:.3} (pairwise {orders:.3?}), required in [{}, {}]",
            C4_WINDOW.0, C4_WINDOW.1
        ),
    );
    assert!(pass);
}

#[test]
fn c05_stability_exponent() {
    let mp = gamma1();
    let mesh = Arc::new(Mesh::uniform(C5_LEVEL).unwrap());
    let scales: Vec<f64> = (0..C5_POINTS)
        .map(|k| 10f64.powf(-1.0 - 2.0 * k as f64 / (C5_POINTS - 1) as f64))
        .collect();
    let mut cfg = SolveConfig::default();
    cfg.fw_gap_tolerance = 1e-12;
    let table =
        stability_sweep(&mp.problem, &mesh, &Family::Rho.unit(), &scales, &cfg, None).unwrap();
    let fitted = table.rows.iter().filter(|r| r.fitted).count();
    let slope = table.slope.unwrap_or(f64::NAN);
    let pass = fitted >= 2 && slope >= C5_MIN_SLOPE;
    report(
        5,
        "stability exponent",
        pass,
        format!(
            "slope {slope:.3} over {fitted} rows above floor {:.3e}, required >= {C5_MIN_SLOPE}",
            table.floor
        ),
    );
    assert!(pass);
}

#[test]
fn c06_state_perturbation_bound() {
    let mp = gamma1();
    // |(A + f_y)^-1| <= 1 / lambda_1 = 1 / (2 pi^2) for monotone f
    let bound = 1.0 / (2.0 * PI * PI);
    type Pair = (Vec<(f64, f64, f64)>, (f64, f64, f64, f64));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pairs: Vec<Pair> = (0..C6_PAIRS)
        .map(|_| {
            let u = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(1..5) as f64,
                        rng.gen_range(1..5) as f64,
                    )
                })
                .collect();
            let xi = (
                rng.gen_range(0.1..2.0),
                rng.gen_range(1..4) as f64,
                rng.gen_range(1..4) as f64,
                rng.gen_range(0.0..3.0),
            );
            (u, xi)
        })
        .collect();
    let mut worst = Vec::new();
    for &n in &C6_LEVELS {
        let mesh = Arc::new(Mesh::uniform(n).unwrap());
        let bounds = Arc::new(CellBounds::from_problem(&mesh, &mp.problem).unwrap());
        let mut max_ratio = 0.0f64;
        for (modes, (a, k, l, ph)) in &pairs {
            let field = |x: Point| {
                modes
                    .iter()
                    .map(|&(c, p, q)| c * (p * PI * x[0]).cos() * (q * PI * x[1]).cos())
                    .sum::<f64>()
                    .clamp(-1.0, 1.0)
            };
            let u = project_pi_h(field, &mesh, bounds.clone()).unwrap();
            let xi = FeFunction::interpolate(mesh.clone(), |x| {
                a * (k * PI * x[0] + ph).sin() * (l * PI * x[1]).sin() + 0.3 * a
            });
            let r = state_sensitivity_ratio(&mp.problem, &mesh, &u, &xi).unwrap();
            max_ratio = max_ratio.max(r);
        }
        worst.push(max_ratio);
    }
    let drift = (worst[0] - worst[1]).abs() / worst[1];
    let pass = worst.iter().all(|&c| c <= bound) && drift <= C6_STABILITY;
    report(
        6,
        "state perturbation bound",
        pass,
        format!("max ratios {worst:.5?} <= {bound:.5}, level drift {drift:.3} <= {C6_STABILITY}"),
    );
    assert!(pass);
}

#[test]
fn c07_derivative_oracles() {
    let mp = make_manufactured(1.0, Variant::AffineGeneral).unwrap();
    let mesh = Arc::new(Mesh::uniform(8).unwrap());
    let bounds = Arc::new(CellBounds::from_problem(&mesh, &mp.problem).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let nt = mesh.num_triangles();
    let (mut fd_err, mut sd_err, mut dual_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..C7_PAIRS {
        let u = ControlField::new(
            mesh.clone(),
            (0..nt).map(|_| rng.gen_range(-0.8..0.8)).collect(),
            bounds.clone(),
        )
        .unwrap();
        // rough cellwise noise is almost annihilated by the solution operator, so v mixes low modes
        let modes: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(1..4) as f64,
                    rng.gen_range(1..4) as f64,
                )
            })
            .collect();
        let v = project_pi_h(
            |x: Point| {
                modes
                    .iter()
                    .map(|&(a, k, l)| a * (k * PI * x[0]).sin() * (l * PI * x[1]).sin())
                    .sum()
            },
            &mesh,
            bounds.clone(),
        )
        .unwrap();
        let shifted = |s: f64| {
            ControlField::new(
                mesh.clone(),
                u.values()
                    .iter()
                    .zip(v.values())
                    .map(|(a, b)| a + s * b)
                    .collect(),
                bounds.clone(),
            )
            .unwrap()
        };
        let j = |s: f64| eval_j(&mp.problem, &mesh, &shifted(s)).unwrap();
        let d1 = eval_j_prime(&mp.problem, &mesh, &u, &v).unwrap();
        let d1_lin = eval_j_prime_linearized(&mp.problem, &mesh, &u, &v).unwrap();
        let d2 = eval_j_second(&mp.problem, &mesh, &u, &v, &v).unwrap();
        let fd = (j(C7_FD_EPS) - j(-C7_FD_EPS)) / (2.0 * C7_FD_EPS);
        let sd = (j(C7_SD_EPS) - 2.0 * j(0.0) + j(-C7_SD_EPS)) / (C7_SD_EPS * C7_SD_EPS);
        fd_err = fd_err.max((fd - d1).abs() / d1.abs());
        sd_err = sd_err.max((sd - d2).abs() / d2.abs());
        dual_err = dual_err.max((d1 - d1_lin).abs());
    }
    let pass = fd_err <= C7_FD_TOL && sd_err <= C7_SD_TOL && dual_err <= C7_DUAL_TOL;
    report(
        7,
        "derivative oracles",
        pass,
        format!("J' rel err {fd_err:.2e} <= {C7_FD_TOL:e}, J'' rel err {sd_err:.2e} <= {C7_SD_TOL:e}, dual forms {dual_err:.2e} <= {C7_DUAL_TOL:e}"),
    );
    assert!(pass);
}

#[test]
fn c08_optimizer_vs_brute_force() {
    let mut cfg = SolveConfig::default();
    cfg.fw_gap_tolerance = 1e-14;
    let mut details = Vec::new();
    let mut pass = true;
    for cells in [2, 4] {
        let c = compare_with_oracle(cells, C8_GRID, &cfg).unwrap();
        pass &= c.passed();
        details.push(format!(
            "{cells} cells: {:.3} steps apart, gap at oracle {:.2e} <= bound {:.2e}",
            c.max_cell_distance_in_steps, c.gap_at_oracle, c.gap_bound
        ));
    }
    report(8, "optimizer vs brute force", pass, details.join("; "));
    assert!(pass);
}

#[test]
fn c09_growth_condition_audit() {
    let mesh = Arc::new(Mesh::uniform(C9_LEVEL).unwrap());
    let params = GrowthParams {
        gamma: 1.0,
        beta: 1.0,
        tau: 1e-2,
        alpha: 0.5,
        c: 1e-3,
    };
    let mut cfg = SolveConfig::default();
    cfg.fw_gap_tolerance = 1e-12;
    let run = |mp: &ManufacturedProblem| {
        let disc = Discretization::new(&mp.problem, mesh.clone()).unwrap();
        let sol = frank_wolfe(&disc, disc.midpoint_control(), &cfg).unwrap();
        assert!(sol.report.converged);
        audit_growth_with(&disc, &sol.u, &params, C9_SAMPLES, C9_SEED).unwrap()
    };
    let nominal = run(&gamma1());
    let degenerate = run(&make_degenerate().unwrap());
    let pass = nominal.violations == 0
        && nominal.c_hat > 0.0
        && degenerate.c_hat <= C9_DETECTION * nominal.c_hat;
    report(
        9,
        "growth audit",
        pass,
        format!(
            "nominal c_hat {:.3e} with {} violations ({}); degenerate c_hat {:.3e} <= {:.3e}",
            nominal.c_hat,
            nominal.violations,
            nominal.label,
            degenerate.c_hat,
            C9_DETECTION * nominal.c_hat
        ),
    );
    assert!(pass);
}

#[test]
fn c10_projection_estimates() {
    let mp = gamma1();
    let lh: Vec<f64> = LEVELS
        .iter()
        .map(|&n| (2f64.sqrt() / n as f64).ln())
        .collect();
    let bang = projection_errors(&mp, &LEVELS).unwrap();
    let s_bang = fit_slope(&lh, &bang.iter().map(|e| e.ln()).collect::<Vec<_>>());
    let smooth = |x: Point| (PI * x[0]).cos() * (x[1] * x[1] + 0.5) + x[0];
    let neg: Vec<f64> = LEVELS
        .iter()
        .map(|&n| {
            let mesh = Arc::new(Mesh::uniform(n).unwrap());
            let bounds = Arc::new(CellBounds::constant(mesh.num_triangles(), -10.0, 10.0));
            let pu = project_pi_h(smooth, &mesh, bounds).unwrap();
            negative_norm_surrogate(&smooth, &pu).unwrap()
        })
        .collect();
    let s_neg = fit_slope(&lh, &neg.iter().map(|e| e.ln()).collect::<Vec<_>>());
    let pass = s_bang >= C10_MIN_ORDER && s_neg >= C10_MIN_ORDER;
    report(
        10,
        "projection estimates",
        pass,
        format!(
            "L1 order {s_bang:.3}, W^-1,2 surrogate order {s_neg:.3}, required >= {C10_MIN_ORDER}"
        ),
    );
    assert!(pass);
}
