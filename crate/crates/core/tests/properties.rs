use std::sync::{Arc, OnceLock};

use bangbang::conditions::{audit_growth_with, cone_membership_from, sample_control, GrowthParams};
use bangbang::control::{cell_norm, distance, CellBounds, ControlField};
use bangbang::fem::{FeFunction, Norm};
use bangbang::harness::manufactured::{make_manufactured, Variant};
use bangbang::mesh::Mesh;
use bangbang::optimizer::{solve_discrete_ocp, DiscreteSolution, SolveConfig};
use bangbang::semilinear::{Deriv2, Discretization, ProblemSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    disc: Discretization,
    sol: DiscreteSolution,
    z: Vec<FeFunction>,
}

const FIXTURE_N: usize = 6;

/// Discrete optimum of the manufactured problem on a coarse mesh, shared by the cases.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mp = make_manufactured(1.0, Variant::Tracking).unwrap();
        let mesh = Arc::new(Mesh::uniform(FIXTURE_N).unwrap());
        let sol = solve_discrete_ocp(
            &mp.problem,
            &mesh,
            &SolveConfig {
                fw_gap_tolerance: 1e-12,
                ..Default::default()
            },
        )
        .unwrap();
        let disc = Discretization::new(&mp.problem, mesh.clone()).unwrap();
        // unit responses to each cell, so that z for any direction is a linear combination
        let (y, _) = disc.state(&sol.u, None).unwrap();
        let lin = disc.linearization(&y).unwrap();
        let nt = mesh.num_triangles();
        let z = (0..nt)
            .map(|t| {
                let mut e = vec![0.0; nt];
                e[t] = 1.0;
                lin.solve_cells(&e).unwrap()
            })
            .collect();
        Fixture { disc, sol, z }
    })
}

fn cubic_problem() -> ProblemSpec {
    ProblemSpec::new(
        "cubic",
        Arc::new(|x, y| Deriv2::new(y * y * y + x[0] - 0.3, 3.0 * y * y, 6.0 * y)),
        Arc::new(|_, _| Deriv2::ZERO),
        Arc::new(|_, _| Deriv2::ZERO),
    )
    .with_bounds(-2.0, 2.0)
}

fn cells(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 2 * n * n)
}

fn control(mesh: &Arc<Mesh>, values: Vec<f64>) -> ControlField {
    let bounds = Arc::new(CellBounds::constant(mesh.num_triangles(), -1.0, 1.0));
    ControlField::new(mesh.clone(), values, bounds).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn uniform_meshes_tile_the_square(n in 1usize..24) {
        let mesh = Mesh::uniform(n).unwrap();
        let areas: Vec<f64> = (0..mesh.num_triangles()).map(|t| mesh.area(t)).collect();
        prop_assert!(areas.iter().all(|&a| a > 0.0));
        prop_assert!((areas.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let fine = mesh.refine();
        prop_assert!(((0..fine.num_triangles()).map(|t| fine.area(t)).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((fine.mesh_size() - 0.5 * mesh.mesh_size()).abs() < 1e-14);
    }

    #[test]
    fn states_are_monotone_in_the_control(base in cells(5), bump in prop::collection::vec(0.0f64..1.0, 50)) {
        let mesh = Arc::new(Mesh::uniform(5).unwrap());
        let disc = Discretization::new(&cubic_problem(), mesh.clone()).unwrap();
        let upper: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let bounds = Arc::new(CellBounds::constant(mesh.num_triangles(), -2.0, 2.0));
        let u1 = ControlField::new(mesh.clone(), base, bounds.clone()).unwrap();
        let u2 = ControlField::new(mesh.clone(), upper, bounds).unwrap();
        let (y1, _) = disc.state(&u1, None).unwrap();
        let (y2, _) = disc.state(&u2, None).unwrap();
        for (a, b) in y1.values().iter().zip(y2.values()) {
            prop_assert!(*a <= *b + 1e-12, "{} > {}", a, b);
        }
    }

    #[test]
    fn convex_combinations_stay_feasible(a in cells(4), b in cells(4), theta in 0.0f64..=1.0) {
        let mesh = Arc::new(Mesh::uniform(4).unwrap());
        let (ua, ub) = (control(&mesh, a), control(&mesh, b));
        prop_assert!(ua.is_feasible() && ub.is_feasible());
        prop_assert!(ua.lerp(&ub, theta).is_feasible());
    }

    #[test]
    fn triangle_inequality(a in cells(3), b in cells(3), c in cells(3)) {
        let mesh = Arc::new(Mesh::uniform(3).unwrap());
        let (ua, ub, uc) = (control(&mesh, a), control(&mesh, b), control(&mesh, c));
        for norm in [Norm::L1, Norm::L2] {
            let ab = distance(&ua, &ub, norm).unwrap();
            let bc = distance(&ub, &uc, norm).unwrap();
            let ac = distance(&ua, &uc, norm).unwrap();
            prop_assert!(ac <= ab + bc + 1e-14);
            prop_assert!((ab - distance(&ub, &ua, norm).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn samples_stay_feasible_and_inside_the_radius(seed in any::<u64>(), alpha in 0.01f64..1.0) {
        let f = fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, u) = sample_control(&f.sol.u, alpha, &mut rng);
        let b = f.sol.u.bounds();
        for (t, v) in u.iter().enumerate() {
            prop_assert!(*v >= b.lower[t] && *v <= b.upper[t]);
        }
        let d: Vec<f64> = u.iter().zip(f.sol.u.values()).map(|(a, b)| a - b).collect();
        prop_assert!(cell_norm(f.sol.u.mesh(), &d, Norm::L1) < alpha);
    }

    #[test]
    fn audit_records_satisfy_the_lhs_identity(seed in 0u64..1000, beta in prop::sample::select(vec![0.5, 1.0])) {
        let f = fixture();
        let params = GrowthParams { gamma: 1.0, beta, tau: 1e-2, alpha: 0.5, c: 1e-3 };
        let audit = audit_growth_with(&f.disc, &f.sol.u, &params, 8, seed).unwrap();
        for s in &audit.samples {
            prop_assert!((s.lhs - (s.j1 + beta * s.j2)).abs() <= 1e-15 * (1.0 + s.j1.abs() + s.j2.abs()));
            prop_assert!((s.lhs_one - s.lhs_half - 0.5 * s.j2).abs() <= 1e-15 * (1.0 + s.j1.abs() + s.j2.abs()));
            prop_assert_eq!(s.in_c, s.in_d && s.in_g);
            prop_assert!(s.l1 > 0.0 && s.l1 < params.alpha);
            prop_assert!((s.rhs_l1 - params.c * s.l1 * s.l1).abs() <= 1e-15);
        }
    }

    #[test]
    fn cones_grow_with_tau(v in prop::collection::vec(-1.0f64..1.0, 2 * FIXTURE_N * FIXTURE_N), t1 in 1e-4f64..1.0, t2 in 1e-4f64..1.0) {
        let f = fixture();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let sp = f.disc.evaluate(&f.sol.u, None).unwrap();
        // point every component into the box so the sign condition holds and the cones are not trivially empty
        let b = f.sol.u.bounds();
        let v: Vec<f64> = v.iter().enumerate().map(|(t, &x)| {
            let u = f.sol.u.values()[t];
            if u <= b.lower[t] { x.abs() } else if u >= b.upper[t] { -x.abs() } else { x }
        }).collect();
        let mut z = FeFunction::zeros(f.sol.u.mesh().clone());
        for (zt, &vt) in f.z.iter().zip(&v) {
            z.axpy(vt, zt).unwrap();
        }
        let j1 = sp.sigma.pair(&v);
        let (d_lo, g_lo) = cone_membership_from(&v, &f.sol.u, &sp.sigma, lo, j1, &z);
        let (d_hi, g_hi) = cone_membership_from(&v, &f.sol.u, &sp.sigma, hi, j1, &z);
        prop_assert!(!d_lo || d_hi);
        prop_assert!(!g_lo || g_hi);
    }
}
