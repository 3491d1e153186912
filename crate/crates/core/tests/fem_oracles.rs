use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use bangbang::control::{CellBounds, ControlField};
use bangbang::fem::{assemble_mass, assemble_stiffness, assemble_weighted_mass, FeFunction};
use bangbang::mesh::Mesh;
use bangbang::quadrature::CellQuadrature;
use bangbang::semilinear::{Deriv2, Discretization, ProblemSpec};
use nalgebra::{DMatrix, SymmetricEigen};

fn zero() -> bangbang::semilinear::NonlinearField {
    Arc::new(|_, _| Deriv2::ZERO)
}

fn state_for_unit_load(f: bangbang::semilinear::NonlinearField, n: usize) -> FeFunction {
    let problem = ProblemSpec::new("unit load", f, zero(), zero());
    let mesh = Arc::new(Mesh::uniform(n).unwrap());
    let disc = Discretization::new(&problem, mesh.clone()).unwrap();
    let bounds = Arc::new(CellBounds::constant(mesh.num_triangles(), -1.0, 1.0));
    let u = ControlField::upper(mesh, bounds);
    disc.state(&u, None).unwrap().0
}

fn centre_value(y: &FeFunction, n: usize) -> f64 {
    y.values()[(n / 2) * (n + 1) + n / 2]
}

/// Fourier series of the solution of -Laplace y = 1 at the centre of the unit square.
fn poisson_centre_series() -> f64 {
    let mut s = 0.0;
    for m in (1..400).step_by(2) {
        for k in (1..400).step_by(2) {
            let (m, k) = (m as f64, k as f64);
            s += 16.0 / (PI.powi(4) * m * k * (m * m + k * k))
                * (m * PI / 2.0).sin()
                * (k * PI / 2.0).sin();
        }
    }
    s
}

/// Five-point finite differences for -Laplace y + y^3 = 1, nonlinear Gauss-Seidel.
fn cubic_fd_centre(n: usize) -> f64 {
    let h2 = 1.0 / (n * n) as f64;
    let mut y = vec![0.0; (n + 1) * (n + 1)];
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    for _ in 0..20_000 {
        let mut change = 0.0f64;
        for j in 1..n {
            for i in 1..n {
                let nb = y[idx(i - 1, j)] + y[idx(i + 1, j)] + y[idx(i, j - 1)] + y[idx(i, j + 1)];
                let mut v = y[idx(i, j)];
                for _ in 0..3 {
                    let r = (4.0 * v - nb) / h2 + v * v * v - 1.0;
                    v -= r / (4.0 / h2 + 3.0 * v * v);
                }
                let v = y[idx(i, j)] + 1.9 * (v - y[idx(i, j)]);
                change = change.max((v - y[idx(i, j)]).abs());
                y[idx(i, j)] = v;
            }
        }
        if change < 1e-13 {
            break;
        }
    }
    y[idx(n / 2, n / 2)]
}

#[test]
fn poisson_centre_value() {
    let reference = poisson_centre_series();
    assert!((reference - 0.0736713).abs() < 1e-6, "series {reference}");
    let y = state_for_unit_load(zero(), 32);
    let c = centre_value(&y, 32);
    assert!((c - reference).abs() < 2e-3, "P1 {c} vs {reference}");
}

#[test]
fn cubic_state_matches_finite_differences() {
    let reference = cubic_fd_centre(64);
    let y = state_for_unit_load(
        Arc::new(|_, y| Deriv2::new(y * y * y, 3.0 * y * y, 6.0 * y)),
        32,
    );
    let c = centre_value(&y, 32);
    assert!((c - reference).abs() < 5e-3, "P1 {c} vs FD {reference}");
}

fn interior_block(a: &[Vec<f64>], mesh: &Mesh) -> DMatrix<f64> {
    let inner: Vec<usize> = (0..mesh.num_vertices())
        .filter(|&v| !mesh.is_boundary(v))
        .collect();
    DMatrix::from_fn(inner.len(), inner.len(), |i, j| a[inner[i]][inner[j]])
}

#[test]
fn stiffness_spectrum() {
    let mesh = Mesh::uniform(8).unwrap();
    let k = assemble_stiffness(&mesh, &|_| [[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let kd = k.to_dense();
    for row in &kd {
        assert!(row.iter().sum::<f64>().abs() < 1e-12);
    }
    let ki = interior_block(&kd, &mesh);
    assert!((&ki - ki.transpose()).amax() < 1e-14);
    let eig = SymmetricEigen::new(ki.clone()).eigenvalues;
    assert!(eig.min() > 0.0);

    // smallest generalized eigenvalue K x = lambda M x approximates 2 pi^2 from above
    let mi = interior_block(&assemble_mass(&mesh).to_dense(), &mesh);
    let l = mi.clone().cholesky().unwrap().l();
    let linv = l.try_inverse().unwrap();
    let sym = &linv * ki * linv.transpose();
    let lambda = SymmetricEigen::new(sym).eigenvalues.min();
    let exact = 2.0 * PI * PI;
    assert!(
        lambda >= exact && lambda < 1.06 * exact,
        "lambda_1 = {lambda}"
    );
}

#[test]
fn weighted_mass_spectrum() {
    let mesh = Mesh::uniform(6).unwrap();
    let quad = CellQuadrature::standard(&mesh);
    let w: Vec<f64> = quad
        .points()
        .iter()
        .map(|q| 1.0 + q.x[0] * q.x[1])
        .collect();
    let m = assemble_weighted_mass(&mesh, &quad, &w).unwrap();
    let d = m.to_dense();
    let full = DMatrix::from_fn(d.len(), d.len(), |i, j| d[i][j]);
    assert!((&full - full.transpose()).amax() < 1e-15);
    assert!(SymmetricEigen::new(full).eigenvalues.min() > 0.0);
    // integral of the weight is 1 + 1/4
    assert!((m.sum_entries() - 1.25).abs() < 1e-13);
}

#[test]
fn mass_matrix_reproduces_l2_norm() {
    let mesh = Arc::new(Mesh::uniform(5).unwrap());
    let f = FeFunction::interpolate(mesh.clone(), |x| x[0] + 2.0 * x[1]);
    let m = assemble_mass(&mesh);
    let q = m.bilinear(f.values(), f.values());
    assert!((q - 8.0 / 3.0).abs() < 1e-13, "{q}");
    assert!((m.sum_entries() - 1.0).abs() < 1e-14);
}

#[test]
fn two_refinements_give_the_fine_uniform_vertices() {
    let coarse = Mesh::uniform(2).unwrap();
    let fine = coarse.refine().refine();
    let key = |p: &[f64; 2]| ((p[0] * 8.0).round() as i64, (p[1] * 8.0).round() as i64);
    let a: BTreeSet<_> = fine.vertices().iter().map(key).collect();
    let b: BTreeSet<_> = Mesh::uniform(8)
        .unwrap()
        .vertices()
        .iter()
        .map(key)
        .collect();
    assert_eq!(fine.num_vertices(), 81);
    assert_eq!(a, b);
    assert_eq!(fine.num_triangles(), 128);
    for p in fine.vertices() {
        let (i, j) = key(p);
        assert!((p[0] - i as f64 / 8.0).abs() < 1e-15 && (p[1] - j as f64 / 8.0).abs() < 1e-15);
    }
}
