//! Piecewise-constant controls: bounds, feasibility, the cellwise-mean
//! projection, bang-bang construction and distances.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_stiffness, load_vector, zero_dirichlet, FeFunction, Norm, Normed, SpdSolver,
};
use crate::mesh::{Mesh, Point};
use crate::objective::SwitchingField;
use crate::quadrature::{integrate_piecewise, CellQuadrature, QPoint, Quadrature};
use crate::semilinear::ProblemSpec;

/// Feasibility slack on cell values.
pub const FEASIBILITY_TOL: f64 = 1e-12;

// Constant data is returned exactly rather than through the weighted sum.
fn cell_mean(rule: &Quadrature, tri: [Point; 3], area: f64, f: &dyn Fn(Point) -> f64) -> f64 {
    let vals: Vec<(f64, f64)> = rule.on(tri).map(|(x, w)| (f(x), w)).collect();
    if vals.iter().all(|v| v.0 == vals[0].0) {
        return vals[0].0;
    }
    vals.iter().map(|(v, w)| v * w).sum::<f64>() / area
}

/// Cell averages of the control bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CellBounds {
    pub fn from_problem(mesh: &Mesh, problem: &ProblemSpec) -> Result<Self> {
        let rule = Quadrature::degree4();
        let mut lower = Vec::with_capacity(mesh.num_triangles());
        let mut upper = Vec::with_capacity(mesh.num_triangles());
        for t in 0..mesh.num_triangles() {
            let tri = mesh.corners(t);
            let a = cell_mean(&rule, tri, mesh.area(t), problem.u_a.as_ref());
            let b = cell_mean(&rule, tri, mesh.area(t), problem.u_b.as_ref());
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::NonFinite {
                    what: "control bound",
                    triangle: t,
                });
            }
            if a >= b {
                return Err(Error::EmptyBox {
                    triangle: t,
                    lower: a,
                    upper: b,
                });
            }
            lower.push(a);
            upper.push(b);
        }
        Ok(Self { lower, upper })
    }

    pub fn constant(cells: usize, lower: f64, upper: f64) -> Self {
        Self {
            lower: vec![lower; cells],
            upper: vec![upper; cells],
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn midpoint(&self, t: usize) -> f64 {
        0.5 * (self.lower[t] + self.upper[t])
    }

    pub fn width(&self, t: usize) -> f64 {
        self.upper[t] - self.lower[t]
    }
}

/// Anything that can be integrated against as a control.
///
/// `visit_cell` reports (x, barycentric coordinates in cell `t`, physical
/// weight, control value) for a rule that integrates the control exactly
/// against smooth functions on cell `t`.
pub trait ControlRep: Sync {
    fn cell_values(&self) -> Option<&[f64]> {
        None
    }

    fn visit_cell(
        &self,
        t: usize,
        mesh: &Mesh,
        quad: &[QPoint],
        f: &mut dyn FnMut(Point, [f64; 3], f64, f64),
    );
}

/// A control that is constant on every cell.
#[derive(Debug, Clone)]
pub struct ControlField {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
    bounds: Arc<CellBounds>,
}

impl ControlField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>, bounds: Arc<CellBounds>) -> Result<Self> {
        if values.len() != mesh.num_triangles() || bounds.len() != mesh.num_triangles() {
            return Err(Error::InvalidArgument(format!(
                "control with {} values and {} bounds on a mesh with {} cells",
                values.len(),
                bounds.len(),
                mesh.num_triangles()
            )));
        }
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "control value",
                triangle: t,
            });
        }
        Ok(Self {
            mesh,
            values,
            bounds,
        })
    }

    pub fn midpoint(mesh: Arc<Mesh>, bounds: Arc<CellBounds>) -> Self {
        let values = (0..bounds.len()).map(|t| bounds.midpoint(t)).collect();
        Self {
            mesh,
            values,
            bounds,
        }
    }

    pub fn lower(mesh: Arc<Mesh>, bounds: Arc<CellBounds>) -> Self {
        let values = bounds.lower.clone();
        Self {
            mesh,
            values,
            bounds,
        }
    }

    pub fn upper(mesh: Arc<Mesh>, bounds: Arc<CellBounds>) -> Self {
        let values = bounds.upper.clone();
        Self {
            mesh,
            values,
            bounds,
        }
    }

    /// Same mesh and bounds, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.mesh.clone(), values, self.bounds.clone())
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> &Arc<CellBounds> {
        &self.bounds
    }

    pub fn is_feasible(&self) -> bool {
        self.values.iter().enumerate().all(|(t, &u)| {
            u >= self.bounds.lower[t] - FEASIBILITY_TOL
                && u <= self.bounds.upper[t] + FEASIBILITY_TOL
        })
    }

    /// Clips every value into its cell box.
    pub fn clamp(&mut self) {
        for (t, u) in self.values.iter_mut().enumerate() {
            *u = u.clamp(self.bounds.lower[t], self.bounds.upper[t]);
        }
    }

    /// (1 - theta) self + theta other.
    pub fn lerp(&self, other: &ControlField, theta: f64) -> ControlField {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + theta * (b - a))
            .collect();
        Self {
            mesh: self.mesh.clone(),
            values,
            bounds: self.bounds.clone(),
        }
    }

    pub fn difference(&self, other: &ControlField) -> Result<Vec<f64>> {
        if self.values.len() != other.values.len() {
            return Err(Error::MeshMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect())
    }

    /// Measure of cells whose value is not at either bound.
    pub fn non_bang_bang_measure(&self, slack: f64) -> f64 {
        (0..self.values.len())
            .filter(|&t| {
                let u = self.values[t];
                (u - self.bounds.lower[t]).abs() > slack && (u - self.bounds.upper[t]).abs() > slack
            })
            .map(|t| self.mesh.area(t))
            .sum()
    }

    /// CSV with one row per cell: index, centroid, value, bounds.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "cell,cx,cy,value,lower,upper")?;
        for t in 0..self.values.len() {
            let c = self.mesh.centroid(t);
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t, c[0], c[1], self.values[t], self.bounds.lower[t], self.bounds.upper[t]
            )?;
        }
        Ok(())
    }
}

impl ControlRep for ControlField {
    fn cell_values(&self) -> Option<&[f64]> {
        Some(&self.values)
    }

    fn visit_cell(
        &self,
        t: usize,
        _mesh: &Mesh,
        quad: &[QPoint],
        f: &mut dyn FnMut(Point, [f64; 3], f64, f64),
    ) {
        let u = self.values[t];
        for q in quad {
            f(q.x, q.bary, q.w, u);
        }
    }
}

/// A control given by a function, integrated with the discretization's quadrature.
#[derive(Clone)]
pub struct FunctionControl {
    pub f: crate::semilinear::ScalarField,
}

impl ControlRep for FunctionControl {
    fn visit_cell(
        &self,
        _t: usize,
        _mesh: &Mesh,
        quad: &[QPoint],
        f: &mut dyn FnMut(Point, [f64; 3], f64, f64),
    ) {
        for q in quad {
            f(q.x, q.bary, q.w, (self.f)(q.x));
        }
    }
}

fn p0_norm(mesh: &Mesh, values: &[f64], which: Norm) -> f64 {
    match which {
        Norm::L1 => values
            .iter()
            .enumerate()
            .map(|(t, v)| mesh.area(t) * v.abs())
            .sum(),
        Norm::L2 => values
            .iter()
            .enumerate()
            .map(|(t, v)| mesh.area(t) * v * v)
            .sum::<f64>()
            .sqrt(),
        Norm::Linf => values.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

impl Normed for ControlField {
    fn norm(&self, which: Norm) -> f64 {
        p0_norm(&self.mesh, &self.values, which)
    }
}

/// Norm of a cellwise-constant array on `mesh`.
pub fn cell_norm(mesh: &Mesh, values: &[f64], which: Norm) -> f64 {
    p0_norm(mesh, values, which)
}

/// Distance between two controls on the same mesh.
pub fn distance(u1: &ControlField, u2: &ControlField, which: Norm) -> Result<f64> {
    if !Arc::ptr_eq(&u1.mesh, &u2.mesh) && u1.mesh.num_triangles() != u2.mesh.num_triangles() {
        return Err(Error::MeshMismatch);
    }
    Ok(p0_norm(&u1.mesh, &u1.difference(u2)?, which))
}

/// Cellwise mean of `u`, computed with the degree-4 rule.
pub fn project_pi_h(
    u: impl Fn(Point) -> f64,
    mesh: &Arc<Mesh>,
    bounds: Arc<CellBounds>,
) -> Result<ControlField> {
    let rule = Quadrature::degree4();
    let mut values = Vec::with_capacity(mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let v = rule.integrate(mesh.corners(t), &u) / mesh.area(t);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "projected function",
                triangle: t,
            });
        }
        values.push(v);
    }
    ControlField::new(mesh.clone(), values, bounds)
}

/// Cellwise mean of a function that jumps across the zero sets of `level_sets`.
pub fn project_pi_h_piecewise(
    u: &dyn Fn(Point) -> f64,
    level_sets: &[&dyn Fn(Point) -> f64],
    depth: usize,
    mesh: &Arc<Mesh>,
    bounds: Arc<CellBounds>,
) -> Result<ControlField> {
    let mut values = Vec::with_capacity(mesh.num_triangles());
    for t in 0..mesh.num_triangles() {
        let v = integrate_piecewise(mesh.corners(t), level_sets, u, depth) / mesh.area(t);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: "projected function",
                triangle: t,
            });
        }
        values.push(v);
    }
    ControlField::new(mesh.clone(), values, bounds)
}

/// Result of the cellwise bang-bang rule.
#[derive(Debug, Clone)]
pub struct BangBang {
    pub control: ControlField,
    /// Cells whose switching mean lies within the band.
    pub singular: Vec<bool>,
}

impl BangBang {
    pub fn singular_measure(&self) -> f64 {
        self.singular
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(|(t, _)| self.control.mesh.area(t))
            .sum()
    }
}

/// Relative width of the band in which a switching mean counts as zero.
pub const SINGULAR_BAND: f64 = 1e-9;

/// Cellwise minimizer of the integral of sigma * u over the box.
///
/// u_T = lower bound where the cell mean of sigma exceeds `tol`, upper bound
/// where it is below `-tol`, midpoint otherwise.
pub fn bangbang_from_switching(
    sigma: &SwitchingField,
    bounds: Arc<CellBounds>,
    tol: f64,
) -> BangBang {
    bangbang_with_fallback(sigma, bounds, tol, None)
}

/// As [`bangbang_from_switching`], but singular cells take the value of `fallback`.
pub fn bangbang_with_fallback(
    sigma: &SwitchingField,
    bounds: Arc<CellBounds>,
    tol: f64,
    fallback: Option<&ControlField>,
) -> BangBang {
    let means = sigma.cell_means();
    let mut singular = vec![false; means.len()];
    let values = means
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            if s > tol {
                bounds.lower[t]
            } else if s < -tol {
                bounds.upper[t]
            } else {
                singular[t] = true;
                fallback.map_or(bounds.midpoint(t), |u| u.values[t])
            }
        })
        .collect();
    BangBang {
        control: ControlField {
            mesh: sigma.mesh().clone(),
            values,
            bounds,
        },
        singular,
    }
}

/// Default absolute band: `SINGULAR_BAND` times the largest |cell mean| of sigma.
pub fn default_band(sigma: &SwitchingField) -> f64 {
    SINGULAR_BAND
        * sigma
            .cell_means()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Computable surrogate of the W^{-1,2} norm of u - Pi_h u.
///
/// Solves -Laplace(w) = u - Pi_h u with P1 elements on the once-refined mesh
/// and returns the H^1_0 seminorm of w.
pub fn negative_norm_surrogate(u: &dyn Fn(Point) -> f64, projected: &ControlField) -> Result<f64> {
    let (fine, map) = projected.mesh.refine_with_map();
    let quad = CellQuadrature::standard(&fine);
    let mut g = Vec::with_capacity(quad.num_points());
    for t in 0..fine.num_triangles() {
        let mean = projected.values[map.cell_parent[t]];
        g.extend(quad.cell(t).iter().map(|q| u(q.x) - mean));
    }
    let k = assemble_stiffness(&fine, &|_| [[1.0, 0.0], [0.0, 1.0]])?
        .eliminate_dirichlet(fine.boundary_flags());
    let mut b = load_vector(&fine, &quad, &g);
    zero_dirichlet(&fine, &mut b);
    let w = SpdSolver::default().solve(&k, &b, None)?;
    Ok(b.iter()
        .zip(&w)
        .map(|(x, y)| x * y)
        .sum::<f64>()
        .max(0.0)
        .sqrt())
}

/// Largest gradient magnitude of a P1 field, a discrete Lipschitz estimate.
pub fn lipschitz_estimate(f: &FeFunction) -> f64 {
    (0..f.mesh().num_triangles())
        .map(|t| {
            let g = f.gradient(t);
            g[0].hypot(g[1])
        })
        .fold(0.0, f64::max)
}
