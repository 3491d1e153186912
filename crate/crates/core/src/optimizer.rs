//! Conditional-gradient solver for the P0 problem, fixed-point solver for the
//! variational discretization, and first-order certification.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::{
    bangbang_with_fallback, default_band, BangBang, CellBounds, ControlField, ControlRep,
    SINGULAR_BAND,
};
use crate::error::Result;
use crate::fem::{FeFunction, Norm};
use crate::mesh::{barycentric, Mesh, Point};
use crate::objective::{StatePoint, SwitchingField};
use crate::quadrature::{fan, from_bary, polygon_area, split_convex, QPoint, Quadrature};
use crate::semilinear::{Discretization, ProblemSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub max_outer_iterations: usize,
    /// Stop once the conditional-gradient gap is below this value.
    pub fw_gap_tolerance: f64,
    /// Maximal number of derivative evaluations in one line search.
    pub line_search_steps: usize,
    /// Line search stops when |phi'(theta)| <= this fraction of the gap.
    pub line_search_rel_tol: f64,
    /// Initial damping of the switching-function fixed point.
    pub fixedpoint_damping: f64,
    /// Fixed point stops when the L1 change of the induced control is below this value.
    pub fixedpoint_tolerance: f64,
    pub max_fixedpoint_iterations: usize,
    /// Relative singular band: |sigma_T| <= band * max|sigma| counts as zero.
    pub singular_band: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_outer_iterations: 200,
            fw_gap_tolerance: 1e-8,
            line_search_steps: 40,
            line_search_rel_tol: 1e-6,
            fixedpoint_damping: 1.0,
            fixedpoint_tolerance: 1e-10,
            max_fixedpoint_iterations: 100,
            singular_band: SINGULAR_BAND,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        let ok = self.fw_gap_tolerance > 0.0
            && self.fixedpoint_tolerance > 0.0
            && self.singular_band >= 0.0
            && self.fixedpoint_damping > 0.0
            && self.fixedpoint_damping <= 1.0
            && self.line_search_rel_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::error::Error::InvalidArgument(format!(
                "invalid solver configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct OptimReport {
    pub scheme: String,
    pub iterations: usize,
    pub j_history: Vec<f64>,
    /// Gap (P0 scheme) or L1 fixed-point residual (variational scheme) per iteration.
    pub gap_history: Vec<f64>,
    pub final_gap: f64,
    pub singular_measure: f64,
    pub converged: bool,
    pub newton_iterations: usize,
    pub damping: f64,
    pub wall_time_s: f64,
}

impl OptimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn final_j(&self) -> f64 {
        self.j_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Output of [`solve_discrete_ocp`].
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub u: ControlField,
    pub y: FeFunction,
    pub p: FeFunction,
    pub sigma: SwitchingField,
    pub report: OptimReport,
}

/// Gap sum_T sigma_T (u_T - v_T) for cell integrals of sigma.
pub fn frank_wolfe_gap(sigma_cells: &[f64], u: &[f64], v: &[f64]) -> f64 {
    sigma_cells
        .iter()
        .zip(u.iter().zip(v))
        .map(|(s, (a, b))| s * (a - b))
        .sum()
}

/// Cellwise minimizer of the linear functional with exact ties kept at `u`.
fn minimizer(sigma: &SwitchingField, bounds: &Arc<CellBounds>, u: &ControlField) -> Vec<f64> {
    sigma
        .cell_integrals()
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            if s > 0.0 {
                bounds.lower[t]
            } else if s < 0.0 {
                bounds.upper[t]
            } else {
                u.values()[t]
            }
        })
        .collect()
}

/// max over feasible v of J_h'(u)(u - v).
pub fn certify_first_order(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u: &ControlField,
) -> Result<f64> {
    let disc = Discretization::new(problem, mesh.clone())?;
    let sp = disc.evaluate(u, None)?;
    Ok(certify_at(&sp.sigma, u))
}

pub fn certify_at(sigma: &SwitchingField, u: &ControlField) -> f64 {
    let v = minimizer(sigma, u.bounds(), u);
    frank_wolfe_gap(sigma.cell_integrals(), u.values(), &v)
}

struct LineSearchPoint {
    theta: f64,
    u: ControlField,
    sp: StatePoint,
    slope: f64,
}

/// Minimizes J_h over the box by conditional gradient with away steps and a
/// derivative line search.
///
/// The iterate is kept as a convex combination of atoms (the start control
/// and the vertices returned by the bang-bang oracle). Away steps move mass
/// off the atom of steepest ascent, which removes the zigzag of the plain
/// method when the minimizer has interior cell values.
pub fn frank_wolfe(
    disc: &Discretization,
    start: ControlField,
    config: &SolveConfig,
) -> Result<DiscreteSolution> {
    config.validate()?;
    let clock = Instant::now();
    let mut report = OptimReport {
        scheme: "conditional-gradient".into(),
        damping: 1.0,
        ..Default::default()
    };
    let mut atoms: Vec<(Vec<f64>, f64)> = vec![(start.values().to_vec(), 1.0)];
    let mut u = start;
    let mut sp = disc.evaluate(&u, None)?;
    report.newton_iterations += sp.newton.iterations;
    loop {
        let band = config.singular_band
            * sp.sigma
                .cell_means()
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
        let BangBang { control: v, .. } =
            bangbang_with_fallback(&sp.sigma, u.bounds().clone(), band, Some(&u));
        let d = v.difference(&u)?;
        let gap = -sp.sigma.pair(&d);
        report.j_history.push(sp.j);
        report.gap_history.push(gap);
        report.final_gap = certify_at(&sp.sigma, &u);
        if gap <= config.fw_gap_tolerance || report.final_gap <= config.fw_gap_tolerance {
            report.converged = true;
            break;
        }
        if report.iterations >= config.max_outer_iterations {
            break;
        }
        report.iterations += 1;
        // away atom: largest sigma-pairing among atoms with positive weight
        let (ia, away_gain) = atoms
            .iter()
            .enumerate()
            .map(|(i, (a, _))| {
                let diff: Vec<f64> = u.values().iter().zip(a).map(|(x, y)| x - y).collect();
                (i, -sp.sigma.pair(&diff))
            })
            .fold((0, f64::NEG_INFINITY), |m, c| if c.1 > m.1 { c } else { m });
        let wa = atoms[ia].1;
        let use_away = away_gain > gap && wa < 1.0;
        let (target, dir, slope_gap) = if use_away {
            let theta_max = wa / (1.0 - wa);
            let a = &atoms[ia].0;
            let t: Vec<f64> = u
                .values()
                .iter()
                .zip(a)
                .map(|(x, y)| x + theta_max * (x - y))
                .collect();
            let mut target = u.with_values(t)?;
            target.clamp();
            let dir = target.difference(&u)?;
            let g = -sp.sigma.pair(&dir);
            (target, dir, g)
        } else {
            (v.clone(), d, gap)
        };
        let Some(p) = line_search(disc, &u, &target, &dir, &sp, slope_gap, config, &mut report)?
        else {
            break;
        };
        if use_away {
            let gamma = p.theta * wa / (1.0 - wa);
            for atom in atoms.iter_mut() {
                atom.1 *= 1.0 + gamma;
            }
            atoms[ia].1 -= gamma;
            if p.theta >= 1.0 || atoms[ia].1 <= 1e-14 {
                atoms.swap_remove(ia);
            }
        } else {
            for atom in atoms.iter_mut() {
                atom.1 *= 1.0 - p.theta;
            }
            match atoms.iter_mut().find(|(a, _)| a.as_slice() == v.values()) {
                Some(atom) => atom.1 += p.theta,
                None => atoms.push((v.values().to_vec(), p.theta)),
            }
            if p.theta >= 1.0 {
                atoms.retain(|(a, _)| a.as_slice() == v.values());
                atoms[0].1 = 1.0;
            }
            atoms.retain(|(_, w)| *w > 1e-14);
        }
        u = p.u;
        sp = p.sp;
    }
    let final_bb = crate::control::bangbang_from_switching(
        &sp.sigma,
        u.bounds().clone(),
        default_band(&sp.sigma),
    );
    report.singular_measure = final_bb.singular_measure();
    report.wall_time_s = clock.elapsed().as_secs_f64();
    Ok(DiscreteSolution {
        u,
        y: sp.y,
        p: sp.p,
        sigma: sp.sigma,
        report,
    })
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    disc: &Discretization,
    u: &ControlField,
    v: &ControlField,
    d: &[f64],
    sp0: &StatePoint,
    gap: f64,
    config: &SolveConfig,
    report: &mut OptimReport,
) -> Result<Option<LineSearchPoint>> {
    let eval =
        |theta: f64, report: &mut OptimReport, warm: &FeFunction| -> Result<LineSearchPoint> {
            let ut = u.lerp(v, theta);
            let sp = disc.evaluate(&ut, Some(warm))?;
            report.newton_iterations += sp.newton.iterations;
            let slope = sp.sigma.pair(d);
            Ok(LineSearchPoint {
                theta,
                u: ut,
                sp,
                slope,
            })
        };
    let j0 = sp0.j;
    let mut best: Option<LineSearchPoint> = None;
    let consider = |p: LineSearchPoint, best: &mut Option<LineSearchPoint>| {
        if p.sp.j <= j0 && best.as_ref().map_or(true, |b| p.sp.j < b.sp.j) {
            *best = Some(p);
        }
    };
    let hi_point = eval(1.0, report, &sp0.y)?;
    if hi_point.slope <= 0.0 && hi_point.sp.j <= j0 {
        return Ok(Some(hi_point));
    }
    let (mut lo, mut slo) = (0.0, -gap);
    let (mut hi, mut shi) = (1.0, hi_point.slope);
    let mut warm = hi_point.sp.y.clone();
    consider(hi_point, &mut best);
    let stop = config.line_search_rel_tol * gap;
    let mut side = 0i8;
    for _ in 0..config.line_search_steps {
        let width = hi - lo;
        // regula falsi with the Illinois modification, safeguarded by bisection
        let mut theta = if shi > slo {
            lo - slo * width / (shi - slo)
        } else {
            0.5 * (lo + hi)
        };
        if !(theta > lo + 1e-3 * width && theta < hi - 1e-3 * width) {
            theta = 0.5 * (lo + hi);
        }
        let p = eval(theta, report, &warm)?;
        let s = p.slope;
        warm = p.sp.y.clone();
        let done = s.abs() <= stop || width < 1e-14;
        consider(p, &mut best);
        if done {
            break;
        }
        if s < 0.0 {
            lo = theta;
            slo = s;
            if side == -1 {
                shi *= 0.5;
            }
            side = -1;
        } else {
            hi = theta;
            shi = s;
            if side == 1 {
                slo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(best)
}

/// Solves the discrete problem with P0 controls, starting from the midpoint control.
pub fn solve_discrete_ocp(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    config: &SolveConfig,
) -> Result<DiscreteSolution> {
    let disc = Discretization::new(problem, mesh.clone())?;
    let start = disc.midpoint_control();
    frank_wolfe(&disc, start, config)
}

/// Control induced pointwise by the sign of the P1 interpolant of a switching function.
#[derive(Debug, Clone)]
pub struct VariationalControl {
    mesh: Arc<Mesh>,
    sigma: Vec<f64>,
    band: f64,
    bounds: Arc<CellBounds>,
}

/// Triangle pieces on which the piecewise-linear fields of a cell keep their signs.
fn sign_pieces(tri: [Point; 3], fields: &[[f64; 3]]) -> Vec<Vec<Point>> {
    let mut pieces = vec![tri.to_vec()];
    for v in fields {
        if v.iter().all(|&x| x >= 0.0) || v.iter().all(|&x| x <= 0.0) {
            continue;
        }
        let lin = |p: Point| {
            let b = barycentric(tri, p);
            b[0] * v[0] + b[1] * v[1] + b[2] * v[2]
        };
        let mut next = Vec::with_capacity(pieces.len() + 1);
        for poly in &pieces {
            let (a, b) = split_convex(poly, lin);
            for part in [a, b] {
                if part.len() >= 3 && polygon_area(&part) > 0.0 {
                    next.push(part);
                }
            }
        }
        pieces = next;
    }
    pieces
}

fn poly_centroid(poly: &[Point]) -> Point {
    let n = poly.len() as f64;
    let s = poly
        .iter()
        .fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

impl VariationalControl {
    pub fn new(mesh: Arc<Mesh>, sigma: Vec<f64>, band: f64, bounds: Arc<CellBounds>) -> Self {
        Self {
            mesh,
            sigma,
            band,
            bounds,
        }
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn band(&self) -> f64 {
        self.band
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn bounds(&self) -> &Arc<CellBounds> {
        &self.bounds
    }

    fn value_for(&self, t: usize, s: f64) -> f64 {
        if s > self.band {
            self.bounds.lower[t]
        } else if s < -self.band {
            self.bounds.upper[t]
        } else {
            self.bounds.midpoint(t)
        }
    }

    pub fn cell_sigma(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.mesh.triangles()[t];
        [self.sigma[a], self.sigma[b], self.sigma[c]]
    }

    /// Sigma on cell `t` as a linear function.
    pub fn sigma_at(&self, t: usize, x: Point) -> f64 {
        let v = self.cell_sigma(t);
        let b = barycentric(self.mesh.corners(t), x);
        b[0] * v[0] + b[1] * v[1] + b[2] * v[2]
    }

    /// Control value at `x` in cell `t`.
    pub fn value_at(&self, t: usize, x: Point) -> f64 {
        self.value_for(t, self.sigma_at(t, x))
    }

    fn band_fields(&self, t: usize) -> [[f64; 3]; 2] {
        let s = self.cell_sigma(t);
        [s.map(|v| v - self.band), s.map(|v| v + self.band)]
    }

    /// Pieces of cell `t` with constant control value.
    pub fn pieces(&self, t: usize) -> Vec<(Vec<Point>, f64)> {
        let tri = self.mesh.corners(t);
        sign_pieces(tri, &self.band_fields(t))
            .into_iter()
            .map(|poly| {
                let c = poly_centroid(&poly);
                let u = self.value_at(t, c);
                (poly, u)
            })
            .collect()
    }

    /// Exact cell means.
    pub fn cell_means(&self) -> Vec<f64> {
        (0..self.mesh.num_triangles())
            .map(|t| {
                self.pieces(t)
                    .iter()
                    .map(|(p, u)| polygon_area(p) * u)
                    .sum::<f64>()
                    / self.mesh.area(t)
            })
            .collect()
    }

    pub fn to_cell_average(&self) -> Result<ControlField> {
        ControlField::new(self.mesh.clone(), self.cell_means(), self.bounds.clone())
    }

    /// Exact L1 distance between the controls induced by `self` and `other`.
    pub fn l1_distance(&self, other: &VariationalControl) -> f64 {
        let mut s = 0.0;
        for t in 0..self.mesh.num_triangles() {
            let [a0, a1] = self.band_fields(t);
            let [b0, b1] = other.band_fields(t);
            let tri = self.mesh.corners(t);
            for poly in sign_pieces(tri, &[a0, a1, b0, b1]) {
                let c = poly_centroid(&poly);
                s += polygon_area(&poly) * (self.value_at(t, c) - other.value_at(t, c)).abs();
            }
        }
        s
    }

    /// Exact L1 distance to a P0 control.
    pub fn l1_distance_cells(&self, cells: &[f64]) -> f64 {
        (0..self.mesh.num_triangles())
            .map(|t| {
                self.pieces(t)
                    .iter()
                    .map(|(p, u)| polygon_area(p) * (u - cells[t]).abs())
                    .sum::<f64>()
            })
            .sum()
    }
}

impl ControlRep for VariationalControl {
    fn visit_cell(
        &self,
        t: usize,
        mesh: &Mesh,
        quad: &[QPoint],
        f: &mut dyn FnMut(Point, [f64; 3], f64, f64),
    ) {
        let s = self.cell_sigma(t);
        let all = |pred: &dyn Fn(f64) -> bool| s.iter().all(|&v| pred(v));
        let band = self.band;
        let uniform = if all(&|v| v > band) {
            Some(self.bounds.lower[t])
        } else if all(&|v| v < -band) {
            Some(self.bounds.upper[t])
        } else if band > 0.0 && all(&|v| v.abs() < band) {
            Some(self.bounds.midpoint(t))
        } else {
            None
        };
        if let Some(u) = uniform {
            for q in quad {
                f(q.x, q.bary, q.w, u);
            }
            return;
        }
        let tri = mesh.corners(t);
        let rule = Quadrature::degree4();
        for (poly, u) in self.pieces(t) {
            for sub in fan(&poly) {
                for (x, w) in rule.on(sub) {
                    f(x, barycentric(tri, x), w, u);
                }
            }
        }
    }
}

/// Output of [`solve_variational_discretization`].
#[derive(Debug, Clone)]
pub struct VariationalSolution {
    pub u: VariationalControl,
    pub y: FeFunction,
    pub p: FeFunction,
    pub sigma: SwitchingField,
    pub report: OptimReport,
}

/// Fixed point u = bang-bang(sigma_h(u)) for the variational discretization.
///
/// The iteration is carried on the nodal switching function, with damping
/// sigma <- (1 - theta) sigma + theta sigma_hat, so every iterate is again a
/// control induced by a P1 switching function. The damping is halved when
/// the induced controls start alternating with period two.
pub fn variational_fixed_point(
    disc: &Discretization,
    config: &SolveConfig,
) -> Result<VariationalSolution> {
    config.validate()?;
    let clock = Instant::now();
    let mut report = OptimReport {
        scheme: "variational-fixed-point".into(),
        ..Default::default()
    };
    let mesh = disc.mesh().clone();
    let bounds = disc.bounds().clone();
    let mut theta = config.fixedpoint_damping;
    let start = disc.evaluate(&disc.midpoint_control(), None)?;
    report.newton_iterations += start.newton.iterations;
    let band_of = |s: &[f64]| config.singular_band * s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut sigma = start.sigma.nodal().values().to_vec();
    let mut warm = start.y;
    let mut previous: Option<VariationalControl> = None;
    loop {
        let u =
            VariationalControl::new(mesh.clone(), sigma.clone(), band_of(&sigma), bounds.clone());
        let sp = disc.evaluate(&u, Some(&warm))?;
        report.newton_iterations += sp.newton.iterations;
        report.j_history.push(sp.j);
        let hat = sp.sigma.nodal().values().to_vec();
        let candidate =
            VariationalControl::new(mesh.clone(), hat.clone(), band_of(&hat), bounds.clone());
        let residual = candidate.l1_distance(&u);
        report.gap_history.push(residual);
        report.final_gap = residual;
        if residual <= config.fixedpoint_tolerance {
            report.converged = true;
        }
        if report.converged || report.iterations >= config.max_fixedpoint_iterations {
            report.damping = theta;
            report.singular_measure = singular_measure(&u);
            report.wall_time_s = clock.elapsed().as_secs_f64();
            return Ok(VariationalSolution {
                u,
                y: sp.y,
                p: sp.p,
                sigma: sp.sigma,
                report,
            });
        }
        if let Some(prev) = &previous {
            if candidate.l1_distance(prev) < 0.1 * residual {
                theta *= 0.5;
            }
        }
        report.iterations += 1;
        for (s, h) in sigma.iter_mut().zip(&hat) {
            *s = (1.0 - theta) * *s + theta * h;
        }
        warm = sp.y;
        previous = Some(u);
    }
}

fn singular_measure(u: &VariationalControl) -> f64 {
    if u.band == 0.0 {
        return 0.0;
    }
    (0..u.mesh.num_triangles())
        .map(|t| {
            u.pieces(t)
                .iter()
                .filter(|(_, v)| *v == u.bounds.midpoint(t))
                .map(|(p, _)| polygon_area(p))
                .sum::<f64>()
        })
        .sum()
}

pub fn solve_variational_discretization(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    config: &SolveConfig,
) -> Result<VariationalSolution> {
    let disc = Discretization::new(problem, mesh.clone())?;
    variational_fixed_point(&disc, config)
}

/// Exact L1 distance between two P0 arrays on a mesh.
pub fn cells_l1(mesh: &Mesh, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    crate::control::cell_norm(mesh, &d, Norm::L1)
}

/// Point of cell `t` with barycentric coordinates `b`.
pub fn cell_point(mesh: &Mesh, t: usize, b: [f64; 3]) -> Point {
    from_bary(mesh.corners(t), b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semilinear::Deriv2;

    fn linear_problem(l_b: f64) -> ProblemSpec {
        ProblemSpec::new(
            "linear",
            Arc::new(|_, y| Deriv2::new(y, 1.0, 0.0)),
            Arc::new(|_, _| Deriv2::ZERO),
            Arc::new(move |_, _| Deriv2::new(l_b, 0.0, 0.0)),
        )
    }

    #[test]
    fn sign_definite_problem_is_solved_in_one_step() {
        let mesh = Arc::new(Mesh::uniform(6).unwrap());
        let sol = solve_discrete_ocp(&linear_problem(0.7), &mesh, &SolveConfig::default()).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.iterations, 1);
        assert!(
            sol.u.values().iter().all(|&u| u == -1.0),
            "{:?}",
            sol.u.values()
        );
        assert!(sol.report.final_gap.abs() < 1e-12);
        let vsol =
            solve_variational_discretization(&linear_problem(-0.3), &mesh, &SolveConfig::default())
                .unwrap();
        assert!(vsol.report.converged && vsol.report.iterations <= 2);
        assert!(vsol.u.cell_means().iter().all(|&u| u == 1.0));
    }

    #[test]
    fn variational_pieces_cover_cells() {
        let mesh = Arc::new(Mesh::uniform(3).unwrap());
        let bounds = Arc::new(CellBounds::constant(mesh.num_triangles(), -1.0, 1.0));
        let sigma: Vec<f64> = mesh
            .vertices()
            .iter()
            .map(|p| p[0] + 0.5 * p[1] - 0.6)
            .collect();
        let u = VariationalControl::new(mesh.clone(), sigma, 0.0, bounds.clone());
        for t in 0..mesh.num_triangles() {
            let area: f64 = u.pieces(t).iter().map(|(p, _)| polygon_area(p)).sum();
            assert!((area - mesh.area(t)).abs() < 1e-15);
        }
        // \int u = |{sigma < 0}| - |{sigma > 0}|
        let neg = {
            // region x + y/2 < 0.6 in the unit square
            let a: f64 = 0.6 - 0.25;
            a
        };
        let total: f64 = u
            .cell_means()
            .iter()
            .enumerate()
            .map(|(t, m)| m * mesh.area(t))
            .sum();
        assert!((total - (neg - (1.0 - neg))).abs() < 1e-14);
        let same = u.clone();
        assert_eq!(u.l1_distance(&same), 0.0);
    }
}
