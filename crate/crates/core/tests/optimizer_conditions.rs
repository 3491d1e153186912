use std::sync::Arc;

use bangbang::conditions::{
    audit_growth, cone_membership, sign_condition, verify_slide_form, GrowthParams,
};
use bangbang::control::{CellBounds, ControlField};
use bangbang::fem::FeFunction;
use bangbang::harness::manufactured::{make_manufactured, Variant, CENTER, RADIUS};
use bangbang::harness::oracle::gap_at;
use bangbang::mesh::Mesh;
use bangbang::optimizer::{solve_discrete_ocp, SolveConfig};
use bangbang::perturbation::{solve_perturbed, Family, DEFAULT_BOUND};
use bangbang::semilinear::{Deriv2, Discretization, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tight() -> SolveConfig {
    SolveConfig {
        fw_gap_tolerance: 1e-12,
        ..SolveConfig::default()
    }
}

/// f = y, L_a = y^2 / 2, L_b = 1 + x1: the switching function is positive everywhere.
fn sign_definite() -> ProblemSpec {
    ProblemSpec::new(
        "sign-definite",
        Arc::new(|_, y| Deriv2::new(y, 1.0, 0.0)),
        Arc::new(|_, y| Deriv2::new(0.5 * y * y, y, 1.0)),
        Arc::new(|x, _| Deriv2::new(1.0 + x[0], 0.0, 0.0)),
    )
}

fn params(alpha: f64) -> GrowthParams {
    GrowthParams {
        gamma: 1.0,
        beta: 1.0,
        tau: 1e-2,
        alpha,
        c: 1e-3,
    }
}

#[test]
fn linear_switching_function_gives_half_and_half() {
    let problem = ProblemSpec::new(
        "linear",
        Arc::new(|_, _| Deriv2::ZERO),
        Arc::new(|_, _| Deriv2::ZERO),
        Arc::new(|x, _| Deriv2::new(x[0] - 0.5, 0.0, 0.0)),
    );
    let mesh = Arc::new(Mesh::uniform(4).unwrap());
    let sol = solve_discrete_ocp(&problem, &mesh, &tight()).unwrap();
    for t in 0..mesh.num_triangles() {
        let expected = if mesh.centroid(t)[0] > 0.5 { -1.0 } else { 1.0 };
        assert_eq!(sol.u.values()[t], expected, "cell {t}");
    }
    let j = sol.report.j_history.last().copied().unwrap();
    assert!((j + 0.25).abs() < 1e-14, "J = {j}");
    assert!(sol.report.final_gap.abs() < 1e-14);
}

#[test]
fn midpoint_is_not_stationary() {
    let mp = make_manufactured(1.0, Variant::Tracking).unwrap();
    let mesh = Arc::new(Mesh::uniform(8).unwrap());
    let disc = Discretization::new(&mp.problem, mesh.clone()).unwrap();
    let gap = gap_at(&mp.problem, &mesh, &disc.midpoint_control()).unwrap();
    assert!(gap > 1e-3, "gap {gap}");
    let sol = solve_discrete_ocp(&mp.problem, &mesh, &tight()).unwrap();
    assert!(gap_at(&mp.problem, &mesh, &sol.u).unwrap() <= 1e-10);
}

#[test]
fn constant_perturbation_flips_a_strip_around_the_switching_curve() {
    let mp = make_manufactured(1.0, Variant::Tracking).unwrap();
    let mesh = Arc::new(Mesh::uniform(32).unwrap());
    let nominal = solve_discrete_ocp(&mp.problem, &mesh, &tight()).unwrap();
    let delta = 0.05;
    let perturbed = solve_perturbed(
        &mp.problem,
        &mesh,
        &Family::Rho.unit().scaled(delta),
        &tight(),
        DEFAULT_BOUND,
    )
    .unwrap();
    let flipped: Vec<usize> = (0..mesh.num_triangles())
        .filter(|&t| (nominal.u.values()[t] - perturbed.u.values()[t]).abs() > 1e-9)
        .collect();
    assert!(!flipped.is_empty());
    for &t in &flipped {
        let x = mesh.centroid(t);
        let dist = ((x[0] - CENTER[0]).hypot(x[1] - CENTER[1]) - RADIUS).abs();
        assert!(
            dist <= 2.0 * delta + mesh.mesh_size(),
            "cell {t} at distance {dist}"
        );
    }
}

#[test]
fn cone_membership_matches_cellwise_loops() {
    let mp = make_manufactured(1.0, Variant::Tracking).unwrap();
    let mesh = Arc::new(Mesh::uniform(8).unwrap());
    let sol = solve_discrete_ocp(&mp.problem, &mesh, &tight()).unwrap();
    let disc = Discretization::new(&mp.problem, mesh.clone()).unwrap();
    let sp = disc.evaluate(&sol.u, None).unwrap();
    let lin = disc.linearization(&sp.y).unwrap();
    let b = sol.u.bounds();
    let nt = mesh.num_triangles();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tau = 0.05;
    let (mut seen_d, mut seen_not_d) = (0, 0);
    let means = sp.sigma.cell_means();
    for trial in 0..60 {
        let mut v = vec![0.0; nt];
        // odd trials stay near the switching curve so that some directions land in D
        let near = |t: usize| trial % 2 == 0 || means[t].abs() <= 1.5 * tau;
        for t in 0..nt {
            if near(t) && rng.gen_bool(0.15) {
                let inward = if sol.u.values()[t] <= b.lower[t] {
                    1.0
                } else {
                    -1.0
                };
                let wrong = trial % 3 == 0 && rng.gen_bool(0.2);
                v[t] = if wrong { -inward } else { inward } * rng.gen_range(0.1..1.0);
            }
        }
        let vf = sol.u.with_values(v.clone()).unwrap();
        let (in_d, in_g) =
            cone_membership(&vf, &sol.u, &sp.sigma, tau, &mp.problem, &mesh).unwrap();

        let mut sign = true;
        let mut small = true;
        let mut j1 = 0.0;
        for t in 0..nt {
            if sol.u.values()[t] == b.lower[t] && v[t] < 0.0 {
                sign = false;
            }
            if sol.u.values()[t] == b.upper[t] && v[t] > 0.0 {
                sign = false;
            }
            if v[t] != 0.0 && means[t].abs() > tau {
                small = false;
            }
            j1 += sp.sigma.cell_integrals()[t] * v[t];
        }
        let z = lin.solve_cells(&v).unwrap();
        let z_l1 = l1_norm(&z, &disc);
        assert_eq!(in_d, sign && small, "trial {trial}");
        assert_eq!(in_g, sign && j1 <= tau * z_l1, "trial {trial}");
        assert_eq!(sign, sign_condition(&v, &sol.u));
        if in_d {
            seen_d += 1;
        } else {
            seen_not_d += 1;
        }
    }
    assert!(
        seen_d > 0 && seen_not_d > 0,
        "{seen_d} in D, {seen_not_d} outside"
    );
}

fn l1_norm(z: &FeFunction, disc: &Discretization) -> f64 {
    disc.quadrature()
        .points()
        .iter()
        .zip(z.at_points(disc.quadrature()))
        .map(|(q, v)| q.w * v.abs())
        .sum()
}

#[test]
fn sign_definite_problem_has_strong_growth() {
    let problem = sign_definite();
    let mesh = Arc::new(Mesh::uniform(8).unwrap());
    let sol = solve_discrete_ocp(&problem, &mesh, &tight()).unwrap();
    assert!(sol.u.values().iter().all(|&v| v == -1.0));
    let audit = audit_growth(&problem, &mesh, &sol.u, &params(0.5), 200, 1).unwrap();
    assert_eq!(audit.violations, 0);
    // sigma >= 0.9 gives lhs >= 0.9 |d|_L1 >= 1.8 |d|_L1^2 with |d| < 1/2
    assert!(audit.c_hat >= 1.8, "c_hat {}", audit.c_hat);
}

#[test]
fn samples_equal_to_the_candidate_are_skipped() {
    let problem = sign_definite();
    let mesh = Arc::new(Mesh::uniform(1).unwrap());
    let bounds = Arc::new(CellBounds::from_problem(&mesh, &problem).unwrap());
    let u_bar = ControlField::lower(mesh.clone(), bounds);
    let n = 300;
    let audit = audit_growth(&problem, &mesh, &u_bar, &params(0.5), n, 3).unwrap();
    assert!(audit.skipped > 0);
    assert_eq!(audit.skipped + audit.samples.len(), n);
    assert!(audit.samples.iter().all(|s| s.l1 > 0.0));
}

#[test]
fn slide_form_and_growth_are_consistent() {
    let mp = make_manufactured(1.0, Variant::Tracking).unwrap();
    let mesh = Arc::new(Mesh::uniform(16).unwrap());
    let sol = solve_discrete_ocp(&mp.problem, &mesh, &tight()).unwrap();
    let report = verify_slide_form(&mp.problem, &mesh, &sol.u, &params(0.5), 150, 4).unwrap();
    assert_eq!(report.inconsistent, 0);
    assert_eq!(report.beta_relation_failures, 0);
    assert!(report.c_increment > 0.0, "{}", report.c_increment);
    assert!(report.mu_slide > 0.0, "{}", report.mu_slide);
}

#[test]
fn invalid_growth_parameters_are_rejected() {
    let mp = make_manufactured(1.0, Variant::Tracking).unwrap();
    let mesh = Arc::new(Mesh::uniform(4).unwrap());
    let sol = solve_discrete_ocp(&mp.problem, &mesh, &tight()).unwrap();
    for p in [
        GrowthParams {
            gamma: 0.5,
            ..params(0.5)
        },
        GrowthParams {
            beta: 0.7,
            ..params(0.5)
        },
        GrowthParams {
            tau: 0.0,
            ..params(0.5)
        },
    ] {
        assert!(audit_growth(&mp.problem, &mesh, &sol.u, &p, 10, 0).is_err());
    }
}
