//! Objective value, first and second derivatives, and the switching function.

use std::sync::Arc;

use crate::control::{ControlField, ControlRep};
use crate::error::{Error, Result};
use crate::fem::FeFunction;
use crate::mesh::Mesh;
use crate::quadrature::CompensatedSum;
use crate::semilinear::{Discretization, Linearization, NewtonReport, ProblemSpec};

/// Switching function sigma = p + L_b(x, y).
#[derive(Debug, Clone)]
pub struct SwitchingField {
    mesh: Arc<Mesh>,
    points: Vec<f64>,
    cell_integrals: Vec<f64>,
    cell_means: Vec<f64>,
    nodal: FeFunction,
}

impl SwitchingField {
    /// Builds from values at the points of a quadrature set with the given weights per cell.
    pub fn from_points(
        mesh: Arc<Mesh>,
        points: Vec<f64>,
        weights: &[f64],
        ranges: impl Fn(usize) -> std::ops::Range<usize>,
        nodal: FeFunction,
    ) -> Result<Self> {
        let mut cell_integrals = Vec::with_capacity(mesh.num_triangles());
        for t in 0..mesh.num_triangles() {
            let s: f64 = ranges(t).map(|k| weights[k] * points[k]).sum();
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    what: "switching function",
                    triangle: t,
                });
            }
            cell_integrals.push(s);
        }
        let cell_means = cell_integrals
            .iter()
            .enumerate()
            .map(|(t, s)| s / mesh.area(t))
            .collect();
        Ok(Self {
            mesh,
            points,
            cell_integrals,
            cell_means,
            nodal,
        })
    }

    /// A field known only through its cell means (used for synthetic tests).
    pub fn from_cell_means(mesh: Arc<Mesh>, cell_means: Vec<f64>) -> Self {
        let cell_integrals = cell_means
            .iter()
            .enumerate()
            .map(|(t, s)| s * mesh.area(t))
            .collect();
        let nodal = FeFunction::zeros(mesh.clone());
        Self {
            mesh,
            points: Vec::new(),
            cell_integrals,
            cell_means,
            nodal,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Values at the quadrature points of the discretization, flat.
    pub fn point_values(&self) -> &[f64] {
        &self.points
    }

    pub fn cell_integrals(&self) -> &[f64] {
        &self.cell_integrals
    }

    pub fn cell_means(&self) -> &[f64] {
        &self.cell_means
    }

    /// Nodal interpolant p_h(x_i) + L_b(x_i, y_h(x_i)).
    pub fn nodal(&self) -> &FeFunction {
        &self.nodal
    }

    /// Integral of sigma * v for a cellwise-constant v.
    pub fn pair(&self, v: &[f64]) -> f64 {
        self.cell_integrals.iter().zip(v).map(|(s, v)| s * v).sum()
    }
}

/// State, adjoint, switching function and objective at one control.
#[derive(Debug, Clone)]
pub struct StatePoint {
    pub y: FeFunction,
    pub p: FeFunction,
    pub sigma: SwitchingField,
    pub j: f64,
    pub newton: NewtonReport,
}

impl Discretization {
    /// J_h(u) for a given state.
    pub fn objective_at(&self, u: &dyn ControlRep, y: &FeFunction) -> f64 {
        let la = self.eval_points(&self.problem().l_a, y);
        let smooth = self
            .quadrature()
            .points()
            .iter()
            .zip(&la)
            .map(|(q, v)| q.w * v.value)
            .collect::<CompensatedSum>()
            .value();
        let l_b = self.problem().l_b.clone();
        smooth + self.control_integral(u, y, &|x, yv, _| l_b(x, yv).value, None)
    }

    pub fn objective(&self, u: &dyn ControlRep, start: Option<&FeFunction>) -> Result<f64> {
        let (y, _) = self.state(u, start)?;
        Ok(self.objective_at(u, &y))
    }

    pub fn switching(&self, y: &FeFunction, p: &FeFunction) -> Result<SwitchingField> {
        let quad = self.quadrature();
        let lb = self.eval_points(&self.problem().l_b, y);
        let pq = p.at_points(quad);
        let points: Vec<f64> = pq.iter().zip(&lb).map(|(a, b)| a + b.value).collect();
        let weights: Vec<f64> = quad.points().iter().map(|q| q.w).collect();
        let l_b = &self.problem().l_b;
        let nodal_values = self
            .mesh()
            .vertices()
            .iter()
            .zip(p.values().iter().zip(y.values()))
            .map(|(&x, (&pv, &yv))| pv + l_b(x, yv).value)
            .collect();
        let nodal = FeFunction::new(self.mesh().clone(), nodal_values)?;
        SwitchingField::from_points(
            self.mesh().clone(),
            points,
            &weights,
            |t| quad.range(t),
            nodal,
        )
    }

    /// State, adjoint and switching function at `u`.
    pub fn evaluate(&self, u: &dyn ControlRep, start: Option<&FeFunction>) -> Result<StatePoint> {
        let (y, newton) = self.state(u, start)?;
        let lin = self.linearization(&y)?;
        let p = lin.adjoint(u)?;
        let sigma = self.switching(&y, &p)?;
        let j = self.objective_at(u, &y);
        Ok(StatePoint {
            y,
            p,
            sigma,
            j,
            newton,
        })
    }

    /// J'(u)v = integral of (L_{a,y} + L_{b,y} u) z + L_b v, with z the linearized state of v.
    pub fn derivative_linearized(
        &self,
        u: &dyn ControlRep,
        y: &FeFunction,
        z: &FeFunction,
        v: &dyn ControlRep,
    ) -> f64 {
        let quad = self.quadrature();
        let la = self.eval_points(&self.problem().l_a, y);
        let zq = z.at_points(quad);
        let smooth: f64 = quad
            .points()
            .iter()
            .zip(la.iter().zip(&zq))
            .map(|(q, (l, zv))| q.w * l.d1 * zv)
            .sum();
        let l_b = self.problem().l_b.clone();
        let cross = self.control_integral(u, y, &|x, yv, zv| l_b(x, yv).d1 * zv, Some(z));
        let direct = self.control_integral(v, y, &|x, yv, _| l_b(x, yv).value, None);
        smooth + cross + direct
    }

    /// J''(u)(v1, v2) from linearized states z1, z2 and the adjoint p.
    pub fn second_derivative(
        &self,
        lin: &Linearization<'_>,
        u: &dyn ControlRep,
        p: &FeFunction,
        (v1, z1): (&dyn ControlRep, &FeFunction),
        (v2, z2): (&dyn ControlRep, &FeFunction),
    ) -> f64 {
        let quad = self.quadrature();
        let y = lin.state();
        let la = self.eval_points(&self.problem().l_a, y);
        let (pq, a, b) = (p.at_points(quad), z1.at_points(quad), z2.at_points(quad));
        let mut s = 0.0;
        for k in 0..quad.num_points() {
            s += quad.points()[k].w * (la[k].d2 - pq[k] * lin.f_yy()[k]) * a[k] * b[k];
        }
        let l_b = self.problem().l_b.clone();
        let mesh = self.mesh().clone();
        let mut curv = 0.0;
        for t in 0..mesh.num_triangles() {
            let (yv, av, bv) = (y.cell_values(t), z1.cell_values(t), z2.cell_values(t));
            u.visit_cell(t, &mesh, quad.cell(t), &mut |x, bc, w, uv| {
                if uv == 0.0 {
                    return;
                }
                let e = |v: [f64; 3]| bc[0] * v[0] + bc[1] * v[1] + bc[2] * v[2];
                curv += w * uv * l_b(x, e(yv)).d2 * e(av) * e(bv);
            });
        }
        let c1 = self.control_integral(v2, y, &|x, yv, zv| l_b(x, yv).d1 * zv, Some(z1));
        let c2 = self.control_integral(v1, y, &|x, yv, zv| l_b(x, yv).d1 * zv, Some(z2));
        s + curv + c1 + c2
    }
}

/// Discrete objective J_h(u).
pub fn eval_j(problem: &ProblemSpec, mesh: &Arc<Mesh>, u: &ControlField) -> Result<f64> {
    Discretization::new(problem, mesh.clone())?.objective(u, None)
}

/// J_h'(u)v through the adjoint: the integral of sigma * v.
pub fn eval_j_prime(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u: &ControlField,
    v: &ControlField,
) -> Result<f64> {
    let disc = Discretization::new(problem, mesh.clone())?;
    Ok(disc.evaluate(u, None)?.sigma.pair(v.values()))
}

/// J_h'(u)v through the linearized state.
pub fn eval_j_prime_linearized(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u: &ControlField,
    v: &ControlField,
) -> Result<f64> {
    let disc = Discretization::new(problem, mesh.clone())?;
    let (y, _) = disc.state(u, None)?;
    let z = disc.linearization(&y)?.solve_cells(v.values())?;
    Ok(disc.derivative_linearized(u, &y, &z, v))
}

/// J_h''(u)(v1, v2).
pub fn eval_j_second(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u: &ControlField,
    v1: &ControlField,
    v2: &ControlField,
) -> Result<f64> {
    let disc = Discretization::new(problem, mesh.clone())?;
    let (y, _) = disc.state(u, None)?;
    let lin = disc.linearization(&y)?;
    let p = lin.adjoint(u)?;
    let z1 = lin.solve_cells(v1.values())?;
    let z2 = lin.solve_cells(v2.values())?;
    Ok(disc.second_derivative(&lin, u, &p, (v1, &z1), (v2, &z2)))
}

/// Switching function sigma_h = p_h + L_b(x, y_h) at the control `u`.
pub fn switching_function(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u: &ControlField,
) -> Result<SwitchingField> {
    Ok(Discretization::new(problem, mesh.clone())?
        .evaluate(u, None)?
        .sigma)
}
