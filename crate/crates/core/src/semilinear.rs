//! Problem data and the discrete state, linearized-state, second-order-state
//! and adjoint solves.

use std::sync::Arc;

use serde::Serialize;

use crate::control::{CellBounds, ControlField, ControlRep};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_stiffness, assemble_weighted_mass, load_vector, load_vector_cells, zero_dirichlet,
    CoefficientFn, FeFunction, SparseOperator, SpdSolver,
};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{CellQuadrature, CompensatedSum, INTERFACE_DEPTH};

/// Value and first two partial derivatives in `y` of a callback g(x, y).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Deriv2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Deriv2 {
    pub const ZERO: Deriv2 = Deriv2 {
        value: 0.0,
        d1: 0.0,
        d2: 0.0,
    };

    pub fn new(value: f64, d1: f64, d2: f64) -> Self {
        Self { value, d1, d2 }
    }
}

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type NonlinearField = Arc<dyn Fn(Point, f64) -> Deriv2 + Send + Sync>;

/// Data of the control problem
///
/// min integral of L_a(x, y) + L_b(x, y) u
/// subject to -div(a grad y) + f(x, y) = u, y = 0 on the boundary, u_a <= u <= u_b.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub a_coeff: Arc<CoefficientFn>,
    pub f: NonlinearField,
    pub l_a: NonlinearField,
    pub l_b: NonlinearField,
    pub u_a: ScalarField,
    pub u_b: ScalarField,
    /// Zero set across which the data may jump; cells it crosses get a composite rule.
    pub interface: Option<ScalarField>,
}

impl std::fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("interface", &self.interface.is_some())
            .finish()
    }
}

impl ProblemSpec {
    /// Laplacian, bounds [-1, 1], no interface.
    pub fn new(
        name: impl Into<String>,
        f: NonlinearField,
        l_a: NonlinearField,
        l_b: NonlinearField,
    ) -> Self {
        Self {
            name: name.into(),
            a_coeff: Arc::new(|_| [[1.0, 0.0], [0.0, 1.0]]),
            f,
            l_a,
            l_b,
            u_a: Arc::new(|_| -1.0),
            u_b: Arc::new(|_| 1.0),
            interface: None,
        }
    }

    pub fn with_bounds(mut self, u_a: f64, u_b: f64) -> Self {
        self.u_a = Arc::new(move |_| u_a);
        self.u_b = Arc::new(move |_| u_b);
        self
    }

    pub fn with_interface(mut self, level_set: ScalarField) -> Self {
        self.interface = Some(level_set);
        self
    }

    pub fn with_coefficient(mut self, a: Arc<CoefficientFn>) -> Self {
        self.a_coeff = a;
        self
    }
}

/// Convergence record of a Newton solve.
#[derive(Debug, Clone, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Scaled residual norms, starting with the initial iterate.
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub halvings: usize,
}

impl NewtonReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub monotonicity_slack: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 30,
            monotonicity_slack: 1e-12,
        }
    }
}

/// A problem discretized on one mesh: quadrature, stiffness matrix and bounds.
pub struct Discretization {
    problem: ProblemSpec,
    mesh: Arc<Mesh>,
    quad: CellQuadrature,
    stiffness: SparseOperator,
    bounds: Arc<CellBounds>,
    residual_scale: f64,
    pub newton: NewtonSettings,
    pub solver: SpdSolver,
}

/// Jacobian of the state equation at a fixed state, ready for repeated solves.
pub struct Linearization<'a> {
    disc: &'a Discretization,
    y: FeFunction,
    op: SparseOperator,
    f_yy: Vec<f64>,
}

impl Discretization {
    pub fn new(problem: &ProblemSpec, mesh: Arc<Mesh>) -> Result<Self> {
        let quad = match &problem.interface {
            Some(ls) => CellQuadrature::with_interface(&mesh, &|p| ls(p), INTERFACE_DEPTH),
            None => CellQuadrature::standard(&mesh),
        };
        let stiffness = assemble_stiffness(&mesh, problem.a_coeff.as_ref())?;
        if stiffness.asymmetry() > 1e-13 {
            return Err(Error::NotSymmetric);
        }
        let bounds = Arc::new(CellBounds::from_problem(&mesh, problem)?);
        let mean_area = 1.0 / mesh.num_triangles() as f64;
        Ok(Self {
            problem: problem.clone(),
            quad,
            stiffness,
            bounds,
            residual_scale: 1.0 / mean_area.sqrt(),
            mesh,
            newton: NewtonSettings::default(),
            solver: SpdSolver::default(),
        })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn quadrature(&self) -> &CellQuadrature {
        &self.quad
    }

    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    pub fn bounds(&self) -> &Arc<CellBounds> {
        &self.bounds
    }

    /// Control with the given cell values and this discretization's bounds.
    pub fn control(&self, values: Vec<f64>) -> Result<ControlField> {
        ControlField::new(self.mesh.clone(), values, self.bounds.clone())
    }

    pub fn midpoint_control(&self) -> ControlField {
        ControlField::midpoint(self.mesh.clone(), self.bounds.clone())
    }

    /// Evaluates a nonlinear callback at every quadrature point for the state `y`.
    pub fn eval_points(&self, g: &NonlinearField, y: &FeFunction) -> Vec<Deriv2> {
        let yq = y.at_points(&self.quad);
        self.quad
            .points()
            .iter()
            .zip(yq)
            .map(|(q, yv)| g(q.x, yv))
            .collect()
    }

    fn check_monotone(&self, fq: &[Deriv2]) -> Result<Vec<f64>> {
        let mut w = Vec::with_capacity(fq.len());
        for t in 0..self.quad.num_cells() {
            for k in self.quad.range(t) {
                let d = fq[k].d1;
                if !d.is_finite() || !fq[k].value.is_finite() {
                    return Err(Error::NonFinite {
                        what: "nonlinearity f",
                        triangle: t,
                    });
                }
                if d < -self.newton.monotonicity_slack {
                    return Err(Error::NonMonotone {
                        triangle: t,
                        value: d,
                    });
                }
                w.push(d.max(0.0));
            }
        }
        Ok(w)
    }

    /// Integral of `u * phi_i` for a control representation.
    pub fn control_load(&self, u: &dyn ControlRep) -> Vec<f64> {
        if let Some(cells) = u.cell_values() {
            return load_vector_cells(&self.mesh, cells);
        }
        let mut b = vec![0.0; self.mesh.num_vertices()];
        for (t, idx) in self.mesh.triangles().iter().enumerate() {
            u.visit_cell(t, &self.mesh, self.quad.cell(t), &mut |_, bary, w, uv| {
                for i in 0..3 {
                    b[idx[i]] += w * uv * bary[i];
                }
            });
        }
        b
    }

    /// Integral of `u * weight(x, y(x)) * phi_i`.
    fn control_weighted_load(
        &self,
        u: &dyn ControlRep,
        y: &FeFunction,
        weight: &dyn Fn(Point, f64) -> f64,
    ) -> Vec<f64> {
        let mut b = vec![0.0; self.mesh.num_vertices()];
        for (t, idx) in self.mesh.triangles().iter().enumerate() {
            let yv = y.cell_values(t);
            u.visit_cell(t, &self.mesh, self.quad.cell(t), &mut |x, bary, w, uv| {
                if uv == 0.0 {
                    return;
                }
                let yx = bary[0] * yv[0] + bary[1] * yv[1] + bary[2] * yv[2];
                let c = w * uv * weight(x, yx);
                for i in 0..3 {
                    b[idx[i]] += c * bary[i];
                }
            });
        }
        b
    }

    /// Integral of `u * g(x, y(x), z(x))` over the domain.
    pub fn control_integral(
        &self,
        u: &dyn ControlRep,
        y: &FeFunction,
        g: &dyn Fn(Point, f64, f64) -> f64,
        z: Option<&FeFunction>,
    ) -> f64 {
        let mut s = CompensatedSum::default();
        for t in 0..self.mesh.num_triangles() {
            let yv = y.cell_values(t);
            let zv = z.map(|z| z.cell_values(t)).unwrap_or([0.0; 3]);
            u.visit_cell(t, &self.mesh, self.quad.cell(t), &mut |x, b, w, uv| {
                if uv == 0.0 {
                    return;
                }
                let yx = b[0] * yv[0] + b[1] * yv[1] + b[2] * yv[2];
                let zx = b[0] * zv[0] + b[1] * zv[1] + b[2] * zv[2];
                s.add(w * uv * g(x, yx, zx));
            });
        }
        s.value()
    }

    /// Nonlinear residual a(y, phi) + (f(y), phi) - b for a fixed control load.
    fn residual(&self, y: &FeFunction, control_load: &[f64]) -> Result<(Vec<f64>, Vec<Deriv2>)> {
        let fq = self.eval_points(&self.problem.f, y);
        let fv: Vec<f64> = fq.iter().map(|d| d.value).collect();
        if let Some(k) = fv.iter().position(|v| !v.is_finite()) {
            let t = (0..self.quad.num_cells())
                .find(|&t| self.quad.range(t).contains(&k))
                .unwrap_or(0);
            return Err(Error::NonFinite {
                what: "nonlinearity f",
                triangle: t,
            });
        }
        let mut r = self.stiffness.apply(y.values());
        for (ri, (li, bi)) in r.iter_mut().zip(
            load_vector(&self.mesh, &self.quad, &fv)
                .iter()
                .zip(control_load),
        ) {
            *ri += li - bi;
        }
        zero_dirichlet(&self.mesh, &mut r);
        Ok((r, fq))
    }

    fn scaled_norm(&self, r: &[f64]) -> f64 {
        r.iter().map(|v| v * v).sum::<f64>().sqrt() * self.residual_scale
    }

    fn jacobian(&self, f_y: &[f64]) -> Result<SparseOperator> {
        let m = assemble_weighted_mass(&self.mesh, &self.quad, f_y)?;
        Ok(self
            .stiffness
            .add_scaled(1.0, &m)
            .eliminate_dirichlet(self.mesh.boundary_flags()))
    }

    /// Damped Newton solve of the state equation for the control load `b`.
    pub fn state_from_load(
        &self,
        b: &[f64],
        start: Option<&FeFunction>,
    ) -> Result<(FeFunction, NewtonReport)> {
        let mut y = match start {
            Some(y0) => y0.clone(),
            None => FeFunction::zeros(self.mesh.clone()),
        };
        for (v, &fixed) in y.values_mut().iter_mut().zip(self.mesh.boundary_flags()) {
            if fixed {
                *v = 0.0;
            }
        }
        let mut report = NewtonReport {
            iterations: 0,
            residuals: Vec::new(),
            converged: false,
            halvings: 0,
        };
        let (mut r, mut fq) = self.residual(&y, b)?;
        let mut rn = self.scaled_norm(&r);
        report.residuals.push(rn);
        while rn > self.newton.tol {
            if report.iterations >= self.newton.max_iter {
                return Err(Error::NewtonDivergence(Box::new(report)));
            }
            let fy = self.check_monotone(&fq)?;
            let jac = self.jacobian(&fy)?;
            let dy = self.solver.solve(&jac, &r, None)?;
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=self.newton.max_halvings {
                let mut trial = y.clone();
                for (v, d) in trial.values_mut().iter_mut().zip(&dy) {
                    *v -= step * d;
                }
                if let Ok((rt, fqt)) = self.residual(&trial, b) {
                    let rtn = self.scaled_norm(&rt);
                    if rtn < rn {
                        accepted = Some((trial, rt, fqt, rtn));
                        break;
                    }
                }
                step *= 0.5;
                report.halvings += 1;
            }
            report.iterations += 1;
            match accepted {
                Some((trial, rt, fqt, rtn)) => {
                    y = trial;
                    r = rt;
                    fq = fqt;
                    rn = rtn;
                    report.residuals.push(rn);
                }
                None => return Err(Error::NewtonDivergence(Box::new(report))),
            }
        }
        self.check_monotone(&fq)?;
        report.converged = true;
        Ok((y, report))
    }

    pub fn state(
        &self,
        u: &dyn ControlRep,
        start: Option<&FeFunction>,
    ) -> Result<(FeFunction, NewtonReport)> {
        self.state_from_load(&self.control_load(u), start)
    }

    pub fn linearization(&self, y: &FeFunction) -> Result<Linearization<'_>> {
        let fq = self.eval_points(&self.problem.f, y);
        let fy = self.check_monotone(&fq)?;
        let op = self.jacobian(&fy)?;
        Ok(Linearization {
            disc: self,
            y: y.clone(),
            op,
            f_yy: fq.iter().map(|d| d.d2).collect(),
        })
    }

    /// Adjoint state for the control `u` with state `y`.
    pub fn adjoint(&self, y: &FeFunction, u: &dyn ControlRep) -> Result<FeFunction> {
        self.linearization(y)?.adjoint(u)
    }
}

impl Linearization<'_> {
    pub fn state(&self) -> &FeFunction {
        &self.y
    }

    fn solve(&self, mut b: Vec<f64>) -> Result<FeFunction> {
        zero_dirichlet(&self.disc.mesh, &mut b);
        let x = self.disc.solver.solve(&self.op, &b, None)?;
        FeFunction::new(self.disc.mesh.clone(), x)
    }

    /// Linearized state for a cellwise-constant source.
    pub fn solve_cells(&self, v: &[f64]) -> Result<FeFunction> {
        self.solve(load_vector_cells(&self.disc.mesh, v))
    }

    /// Linearized state for a general control representation.
    pub fn solve_control(&self, v: &dyn ControlRep) -> Result<FeFunction> {
        self.solve(self.disc.control_load(v))
    }

    /// Linearized state for a source given at the quadrature points.
    pub fn solve_points(&self, g: &[f64]) -> Result<FeFunction> {
        self.solve(load_vector(&self.disc.mesh, &self.disc.quad, g))
    }

    /// Linearized state for a P1 source.
    pub fn solve_nodal(&self, v: &FeFunction) -> Result<FeFunction> {
        self.solve_points(&v.at_points(&self.disc.quad))
    }

    /// Second-order state with source -f_yy z1 z2.
    pub fn second_order(&self, z1: &FeFunction, z2: &FeFunction) -> Result<FeFunction> {
        let q = &self.disc.quad;
        let (a, b) = (z1.at_points(q), z2.at_points(q));
        let g: Vec<f64> = self
            .f_yy
            .iter()
            .zip(a.iter().zip(&b))
            .map(|(c, (x, y))| -c * x * y)
            .collect();
        self.solve_points(&g)
    }

    pub fn f_yy(&self) -> &[f64] {
        &self.f_yy
    }

    /// Adjoint with source L_{a,y} + L_{b,y} u.
    pub fn adjoint(&self, u: &dyn ControlRep) -> Result<FeFunction> {
        let d = self.disc;
        let la = d.eval_points(&d.problem.l_a, &self.y);
        let lay: Vec<f64> = la.iter().map(|v| v.d1).collect();
        let mut b = load_vector(&d.mesh, &d.quad, &lay);
        let l_b = d.problem.l_b.clone();
        let extra = d.control_weighted_load(u, &self.y, &|x, y| l_b(x, y).d1);
        for (bi, e) in b.iter_mut().zip(extra) {
            *bi += e;
        }
        self.solve(b)
    }
}

/// Discrete state for the control `u`.
pub fn solve_state(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u: &ControlField,
) -> Result<(FeFunction, NewtonReport)> {
    Discretization::new(problem, mesh.clone())?.state(u, None)
}

/// Linearized state z solving the Jacobian system with source v at the state y.
pub fn solve_linearized(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    y: &FeFunction,
    v: &ControlField,
) -> Result<FeFunction> {
    Discretization::new(problem, mesh.clone())?
        .linearization(y)?
        .solve_cells(v.values())
}

/// Second-order state w for directions with linearized states z1, z2.
pub fn solve_second_order(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    y: &FeFunction,
    z1: &FeFunction,
    z2: &FeFunction,
) -> Result<FeFunction> {
    Discretization::new(problem, mesh.clone())?
        .linearization(y)?
        .second_order(z1, z2)
}

/// Discrete adjoint state for the control `u` with its state `y`.
pub fn solve_adjoint(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    y: &FeFunction,
    u: &ControlField,
) -> Result<FeFunction> {
    Discretization::new(problem, mesh.clone())?.adjoint(y, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{Norm, Normed};

    fn cubic() -> ProblemSpec {
        ProblemSpec::new(
            "cubic",
            Arc::new(|_, y| Deriv2::new(y * y * y, 3.0 * y * y, 6.0 * y)),
            Arc::new(|_, y| Deriv2::new(0.5 * y * y, y, 1.0)),
            Arc::new(|_, _| Deriv2::ZERO),
        )
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let p = ProblemSpec::new(
            "zero",
            Arc::new(|_, _| Deriv2::ZERO),
            Arc::new(|_, _| Deriv2::ZERO),
            Arc::new(|_, _| Deriv2::ZERO),
        );
        let mesh = Arc::new(Mesh::uniform(4).unwrap());
        let disc = Discretization::new(&p, mesh).unwrap();
        let u = disc.control(vec![0.0; 32]).unwrap();
        let (y, rep) = disc.state(&u, None).unwrap();
        assert!(rep.converged);
        assert_eq!(y.norm(Norm::Linf), 0.0);
    }

    #[test]
    fn newton_converges_quadratically() {
        let mut p = cubic();
        p.f = Arc::new(|_, y| {
            Deriv2::new(
                y * y * y + 5.0 * y.powi(5),
                3.0 * y * y + 25.0 * y.powi(4),
                6.0 * y + 100.0 * y.powi(3),
            )
        });
        let p = p.with_bounds(-40.0, 40.0);
        let mesh = Arc::new(Mesh::uniform(16).unwrap());
        let disc = Discretization::new(&p, mesh).unwrap();
        let u = disc.control(vec![40.0; 512]).unwrap();
        let (y, rep) = disc.state(&u, None).unwrap();
        assert!(rep.converged && y.is_dirichlet());
        let r = &rep.residuals;
        assert!(r.windows(2).all(|w| w[1] < w[0]));
        assert!(r.len() >= 4, "{r:?}");
        let n = r.len();
        for k in n - 3..n - 1 {
            if r[k + 1] > 1e-13 {
                assert!(r[k + 1] / (r[k] * r[k]) < 1e3, "{r:?}");
            }
        }
    }

    #[test]
    fn rejects_decreasing_nonlinearity() {
        let mut p = cubic();
        p.f = Arc::new(|_, y| Deriv2::new(-y, -1.0, 0.0));
        let mesh = Arc::new(Mesh::uniform(4).unwrap());
        let disc = Discretization::new(&p, mesh).unwrap();
        let u = disc.control(vec![1.0; 32]).unwrap();
        assert!(matches!(
            disc.state(&u, None),
            Err(Error::NonMonotone { .. })
        ));
    }

    #[test]
    fn tracking_own_state_has_zero_adjoint() {
        let p0 = cubic();
        let mesh = Arc::new(Mesh::uniform(8).unwrap());
        let disc = Discretization::new(&p0, mesh.clone()).unwrap();
        let u = disc.control(vec![0.7; 128]).unwrap();
        let (y, _) = disc.state(&u, None).unwrap();
        let mut p = p0.clone();
        let yd = y.clone();
        let loc = crate::mesh::PointLocator::new(mesh.clone());
        p.l_a = Arc::new(move |x, yv| {
            let (t, b) = loc.locate(x).unwrap();
            let target = yd.eval_bary(t, b);
            Deriv2::new(0.5 * (yv - target).powi(2), yv - target, 1.0)
        });
        let disc = Discretization::new(&p, mesh).unwrap();
        let adj = disc.adjoint(&y, &u).unwrap();
        assert!(adj.norm(Norm::Linf) < 1e-12);
    }
}
