//! Convergence studies against manufactured solutions.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlField, ControlRep, FunctionControl};
use crate::error::Result;
use crate::fem::{FeFunction, Norm, Normed};
use crate::harness::manufactured::ManufacturedProblem;
use crate::mesh::{Mesh, Point, RefinementMap};
use crate::optimizer::{frank_wolfe, variational_fixed_point, SolveConfig, VariationalControl};
use crate::quadrature::integrate_piecewise;
use crate::semilinear::{Discretization, ScalarField};

/// Subdivision depth for exact control errors near the switching curve.
pub const ERROR_DEPTH: usize = 6;

/// Least-squares slope of ys against xs.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// log2(e_k / e_{k+1}) for consecutive entries.
pub fn pairwise_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// (h |log h|)^2
pub fn log_abscissa(h: f64) -> f64 {
    (h * h.ln().abs()).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Full,
    Variational,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EocRow {
    pub n: usize,
    pub h: f64,
    pub control_l1: f64,
    pub state_l2: f64,
    pub adjoint_l2: f64,
    pub j: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub order_control: Option<f64>,
    pub order_state: Option<f64>,
    pub order_adjoint: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EocTable {
    pub scheme: Scheme,
    pub rows: Vec<EocRow>,
    /// Least-squares slopes of log error against log h over converged rows.
    pub slope_control: f64,
    pub slope_state: f64,
    /// Slopes against log((h |log h|)^2).
    pub slope_control_log: f64,
    pub slope_state_log: f64,
}

impl EocTable {
    pub fn from_rows(scheme: Scheme, mut rows: Vec<EocRow>) -> Self {
        for k in 1..rows.len() {
            let (a, b) = (&rows[k - 1], &rows[k]);
            let ok = a.converged && b.converged;
            let (oc, os, oa) = (
                ok.then(|| (a.control_l1 / b.control_l1).log2()),
                ok.then(|| (a.state_l2 / b.state_l2).log2()),
                ok.then(|| (a.adjoint_l2 / b.adjoint_l2).log2()),
            );
            rows[k].order_control = oc;
            rows[k].order_state = os;
            rows[k].order_adjoint = oa;
        }
        let used: Vec<&EocRow> = rows.iter().filter(|r| r.converged).collect();
        let lh: Vec<f64> = used.iter().map(|r| r.h.ln()).collect();
        let ll: Vec<f64> = used.iter().map(|r| log_abscissa(r.h).ln()).collect();
        let eu: Vec<f64> = used.iter().map(|r| r.control_l1.ln()).collect();
        let ey: Vec<f64> = used.iter().map(|r| r.state_l2.ln()).collect();
        let fit = |x: &[f64], y: &[f64]| {
            if x.len() >= 2 {
                fit_slope(x, y)
            } else {
                f64::NAN
            }
        };
        Self {
            scheme,
            slope_control: fit(&lh, &eu),
            slope_state: fit(&lh, &ey),
            slope_control_log: fit(&ll, &eu),
            slope_state_log: fit(&ll, &ey),
            rows,
        }
    }

    /// Smallest pairwise control order over the last `k` pairs.
    pub fn min_control_order_last(&self, k: usize) -> f64 {
        last_orders(&self.rows, k, |r| r.order_control)
    }

    pub fn min_state_order_last(&self, k: usize) -> f64 {
        last_orders(&self.rows, k, |r| r.order_state)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,h,control_l1,state_l2,adjoint_l2,j,gap,iterations,converged,order_control,order_state,order_adjoint")?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{}",
                r.n,
                r.h,
                r.control_l1,
                r.state_l2,
                r.adjoint_l2,
                r.j,
                r.gap,
                r.iterations,
                r.converged,
                opt(r.order_control),
                opt(r.order_state),
                opt(r.order_adjoint)
            )?;
        }
        Ok(())
    }
}

fn last_orders(rows: &[EocRow], k: usize, get: impl Fn(&EocRow) -> Option<f64>) -> f64 {
    let orders: Vec<Option<f64>> = rows.iter().skip(1).map(get).collect();
    let tail = &orders[orders.len().saturating_sub(k)..];
    tail.iter()
        .map(|o| o.unwrap_or(f64::NAN))
        .fold(
            f64::INFINITY,
            |m, v| if v.is_nan() { f64::NAN } else { m.min(v) },
        )
}

/// Exact L1 distance between a P0 control and the bang-bang function `u_bar`
/// whose jumps lie on the zero set of `curve`.
pub fn control_l1_error(
    u: &ControlField,
    u_bar: &dyn Fn(Point) -> f64,
    curve: &dyn Fn(Point) -> f64,
) -> f64 {
    let mesh = u.mesh();
    (0..mesh.num_triangles())
        .map(|t| {
            let ut = u.values()[t];
            integrate_piecewise(
                mesh.corners(t),
                &[curve],
                &|x| (ut - u_bar(x)).abs(),
                ERROR_DEPTH,
            )
        })
        .sum()
}

/// Exact L1 distance between a variational control and `u_bar`.
pub fn variational_l1_error(
    u: &VariationalControl,
    u_bar: &dyn Fn(Point) -> f64,
    curve: &dyn Fn(Point) -> f64,
) -> f64 {
    let mesh = u.mesh().clone();
    (0..mesh.num_triangles())
        .map(|t| {
            let band = u.band();
            let lo = |x: Point| u.sigma_at(t, x) - band;
            let hi = |x: Point| u.sigma_at(t, x) + band;
            let sets: Vec<&dyn Fn(Point) -> f64> = if band > 0.0 {
                vec![curve, &lo, &hi]
            } else {
                vec![curve, &lo]
            };
            integrate_piecewise(
                mesh.corners(t),
                &sets,
                &|x| (u.value_at(t, x) - u_bar(x)).abs(),
                ERROR_DEPTH,
            )
        })
        .sum()
}

/// Cellwise mean of `u_bar` computed with the exact switching curve.
pub fn project_exact(mp: &ManufacturedProblem, disc: &Discretization) -> Result<ControlField> {
    crate::control::project_pi_h_piecewise(
        mp.u_bar.as_ref(),
        &[mp.switching_curve.as_ref()],
        ERROR_DEPTH,
        disc.mesh(),
        disc.bounds().clone(),
    )
}

/// Gap tolerance c_gap h^2 used on a mesh.
pub fn gap_tolerance(c_gap: f64, h: f64) -> f64 {
    c_gap * h * h
}

/// Default c_gap: 1e-2 |J_h(start)| on the coarsest level.
pub fn default_c_gap(mp: &ManufacturedProblem, n: usize) -> Result<f64> {
    let disc = Discretization::new(&mp.problem, Arc::new(Mesh::uniform(n)?))?;
    let j = disc.objective(&disc.midpoint_control(), None)?;
    Ok(1e-2 * j.abs())
}

/// Runs one scheme on every level of `levels` (subdivisions per side).
pub fn eoc_study(
    mp: &ManufacturedProblem,
    scheme: Scheme,
    levels: &[usize],
    config: &SolveConfig,
    c_gap: Option<f64>,
) -> Result<EocTable> {
    let c_gap = match c_gap {
        Some(c) => c,
        None => default_c_gap(mp, levels[0])?,
    };
    let rows: Vec<Result<EocRow>> = levels
        .par_iter()
        .map(|&n| {
            let mesh = Arc::new(Mesh::uniform(n)?);
            let disc = Discretization::new(&mp.problem, mesh.clone())?;
            let h = mesh.mesh_size();
            let mut cfg = config.clone();
            cfg.fw_gap_tolerance = gap_tolerance(c_gap, h);
            let (control_l1, y, p, j, gap, iterations, converged) = match scheme {
                Scheme::Full => {
                    let sol = frank_wolfe(&disc, disc.midpoint_control(), &cfg)?;
                    let e =
                        control_l1_error(&sol.u, mp.u_bar.as_ref(), mp.switching_curve.as_ref());
                    let r = sol.report;
                    (
                        e,
                        sol.y,
                        sol.p,
                        r.final_j(),
                        r.final_gap,
                        r.iterations,
                        r.converged,
                    )
                }
                Scheme::Variational => {
                    let sol = variational_fixed_point(&disc, &cfg)?;
                    let e = variational_l1_error(
                        &sol.u,
                        mp.u_bar.as_ref(),
                        mp.switching_curve.as_ref(),
                    );
                    let r = sol.report;
                    (
                        e,
                        sol.y,
                        sol.p,
                        r.final_j(),
                        r.final_gap,
                        r.iterations,
                        r.converged,
                    )
                }
            };
            Ok(EocRow {
                n,
                h,
                control_l1,
                state_l2: y.l2_error(mp.y_bar.as_ref()),
                adjoint_l2: p.l2_error(mp.p_bar.as_ref()),
                j,
                gap,
                iterations,
                converged,
                order_control: None,
                order_state: None,
                order_adjoint: None,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(EocTable::from_rows(scheme, rows))
}

/// Errors of discrete states for fixed controls against a fine-mesh reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedControlStudy {
    pub levels: Vec<usize>,
    pub reference_level: usize,
    /// errors[c][k]: L2 error of control c on level k.
    pub errors: Vec<Vec<f64>>,
    pub slopes: Vec<f64>,
}

/// State errors for fixed controls on the nested meshes levels[0] * 2^k,
/// measured against the solution on `reference` subdivisions.
pub fn fixed_control_study(
    mp: &ManufacturedProblem,
    controls: &[ScalarField],
    levels: &[usize],
    reference: usize,
) -> Result<FixedControlStudy> {
    let coarse = levels[0];
    let mut meshes = vec![Arc::new(Mesh::uniform(coarse)?)];
    let mut maps: Vec<RefinementMap> = Vec::new();
    let mut n = coarse;
    while n < reference {
        let (fine, map) = meshes.last().unwrap().refine_with_map();
        meshes.push(Arc::new(fine));
        maps.push(map);
        n *= 2;
    }
    let size_of = |k: usize| coarse << k;
    let reference_index = meshes.len() - 1;
    let level_index: Vec<usize> = levels
        .iter()
        .map(|&l| (0..meshes.len()).find(|&k| size_of(k) == l))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| {
            crate::error::Error::InvalidArgument("levels must double from the first".into())
        })?;
    let solve = |k: usize, c: &ScalarField| -> Result<FeFunction> {
        let disc = Discretization::new(&mp.problem, meshes[k].clone())?;
        let u = FunctionControl { f: c.clone() };
        Ok(disc.state(&u as &dyn ControlRep, None)?.0)
    };
    let errors: Vec<Result<Vec<f64>>> = controls
        .par_iter()
        .map(|c| {
            let y_ref = solve(reference_index, c)?;
            level_index
                .par_iter()
                .map(|&k| {
                    let mut y = solve(k, c)?.into_values();
                    for map in &maps[k..] {
                        y = map.prolong_nodal(&y);
                    }
                    let y = FeFunction::new(meshes[reference_index].clone(), y)?;
                    Ok(y.sub(&y_ref)?.norm(Norm::L2))
                })
                .collect()
        })
        .collect();
    let errors = errors.into_iter().collect::<Result<Vec<_>>>()?;
    let lh: Vec<f64> = levels
        .iter()
        .map(|&n| (2f64.sqrt() / n as f64).ln())
        .collect();
    let slopes = errors
        .iter()
        .map(|e| fit_slope(&lh, &e.iter().map(|v| v.ln()).collect::<Vec<_>>()))
        .collect();
    Ok(FixedControlStudy {
        levels: levels.to_vec(),
        reference_level: reference,
        errors,
        slopes,
    })
}

/// Errors |u_bar - Pi_h u_bar|_L1 on the given levels.
pub fn projection_errors(mp: &ManufacturedProblem, levels: &[usize]) -> Result<Vec<f64>> {
    levels
        .par_iter()
        .map(|&n| {
            let disc = Discretization::new(&mp.problem, Arc::new(Mesh::uniform(n)?))?;
            let pu = project_exact(mp, &disc)?;
            Ok(control_l1_error(
                &pu,
                mp.u_bar.as_ref(),
                mp.switching_curve.as_ref(),
            ))
        })
        .collect()
}
