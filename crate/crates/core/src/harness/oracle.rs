//! Exhaustive grid search over cell values on tiny meshes.

use std::sync::Arc;

use rayon::prelude::*;

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::optimizer::certify_at;
use crate::semilinear::{Deriv2, Discretization, ProblemSpec};

pub const MAX_CELLS: usize = 4;
pub const MAX_GRID: usize = 31;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub u: ControlField,
    pub j: f64,
    /// Grid spacing per cell.
    pub step: Vec<f64>,
    pub evaluations: usize,
}

fn grid_value(lo: f64, hi: f64, k: usize, m: usize) -> f64 {
    if k + 1 == m {
        hi
    } else {
        lo + (hi - lo) * k as f64 / (m - 1) as f64
    }
}

/// Global minimizer of J_h over the tensor grid of `grid` values per cell.
pub fn oracle_global_min(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    grid: usize,
) -> Result<OracleResult> {
    let nt = mesh.num_triangles();
    if nt > MAX_CELLS || grid > MAX_GRID {
        return Err(Error::InvalidArgument(format!(
            "oracle size cap exceeded: {nt} cells, {grid} values per cell (limits {MAX_CELLS}, {MAX_GRID})"
        )));
    }
    if grid < 2 {
        return Err(Error::InvalidArgument(
            "oracle grid needs at least 2 values".into(),
        ));
    }
    let disc = Discretization::new(problem, mesh.clone())?;
    let bounds = disc.bounds().clone();
    let total = grid.pow(nt as u32);
    let decode = |mut idx: usize| -> Vec<f64> {
        (0..nt)
            .map(|t| {
                let k = idx % grid;
                idx /= grid;
                grid_value(bounds.lower[t], bounds.upper[t], k, grid)
            })
            .collect()
    };
    let best = (0..total)
        .into_par_iter()
        .map(|idx| -> Result<(f64, usize)> {
            let u = disc.control(decode(idx))?;
            Ok((disc.objective(&u, None)?, idx))
        })
        .try_reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| Ok(if (b.0, b.1) < (a.0, a.1) { b } else { a }),
        )?;
    let u = disc.control(decode(best.1))?;
    let step = (0..nt)
        .map(|t| bounds.width(t) / (grid - 1) as f64)
        .collect();
    Ok(OracleResult {
        u,
        j: best.0,
        step,
        evaluations: total,
    })
}

/// Upper bound for the conditional-gradient gap at a grid point within one step of a minimizer.
///
/// Valid when the switching function is affine in u, i.e. f linear in y and L quadratic.
pub fn grid_gap_bound(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u: &ControlField,
    step: &[f64],
) -> Result<f64> {
    let disc = Discretization::new(problem, mesh.clone())?;
    let base = disc.evaluate(u, None)?;
    let s0 = base.sigma.cell_means().to_vec();
    let nt = mesh.num_triangles();
    let bounds = disc.bounds();
    let mut coupling = vec![0.0; nt];
    for s in 0..nt {
        let mut v = u.values().to_vec();
        v[s] += step[s];
        let sp = disc.evaluate(&disc.control(v)?, Some(&base.y))?;
        for (c, (a, b)) in coupling
            .iter_mut()
            .zip(sp.sigma.cell_means().iter().zip(&s0))
        {
            *c += (a - b).abs();
        }
    }
    Ok((0..nt)
        .map(|t| mesh.area(t) * (s0[t].abs() * step[t] + bounds.width(t) * coupling[t]))
        .sum())
}

/// Conditional-gradient gap of J_h at u.
pub fn gap_at(problem: &ProblemSpec, mesh: &Arc<Mesh>, u: &ControlField) -> Result<f64> {
    let disc = Discretization::new(problem, mesh.clone())?;
    let sp = disc.evaluate(u, None)?;
    Ok(certify_at(&sp.sigma, u))
}

/// Convex test instance with f = y, L = y^2 / 2 + l(x) u on the mesh with `cells` triangles.
///
/// l is scaled so that on the 4-cell mesh the minimizer has an interior cell value.
pub fn convex_instance(cells: usize) -> Result<(ProblemSpec, Arc<Mesh>)> {
    let mesh = match cells {
        2 => Mesh::uniform(1)?,
        4 => Mesh::crossed_square(),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "no convex instance with {cells} cells"
            )))
        }
    };
    let problem = ProblemSpec::new(
        format!("convex-{cells}-cells"),
        Arc::new(|_, y| Deriv2::new(y, 1.0, 0.0)),
        Arc::new(|_, y| Deriv2::new(0.5 * y * y, y, 1.0)),
        Arc::new(|x: Point, _| {
            Deriv2::new(1e-4 * (-4.0 + (x[0] - x[1]) + 0.5 * (x[0] - 0.5)), 0.0, 0.0)
        }),
    );
    Ok((problem, Arc::new(mesh)))
}
