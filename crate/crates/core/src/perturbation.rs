//! Perturbed problems and stability sweeps.
//!
//! A perturbation zeta = delta (xi, eta, rho) changes the state equation to
//! A y + f(x, y) = u + xi and the objective to J + integral of (rho u + eta y).

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{distance, ControlField};
use crate::error::{Error, Result};
use crate::fem::{FeFunction, Norm, Normed};
use crate::harness::eoc::fit_slope;
use crate::mesh::{Mesh, Point};
use crate::optimizer::{solve_discrete_ocp, DiscreteSolution, SolveConfig};
use crate::quadrature::Quadrature;
use crate::semilinear::{Deriv2, Discretization, ProblemSpec, ScalarField};

/// Default bound M on the perturbation size.
pub const DEFAULT_BOUND: f64 = 10.0;

#[derive(Clone, Default)]
pub struct Perturbation {
    pub xi: Option<ScalarField>,
    pub eta: Option<ScalarField>,
    pub rho: Option<ScalarField>,
    pub delta: f64,
}

impl std::fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Perturbation")
            .field("xi", &self.xi.is_some())
            .field("eta", &self.eta.is_some())
            .field("rho", &self.rho.is_some())
            .field("delta", &self.delta)
            .finish()
    }
}

/// Shipped perturbation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Family {
    /// rho = 1
    Rho,
    /// xi = sin(pi x1) sin(pi x2)
    Xi,
    /// eta = sin(pi x1) sin(pi x2)
    Eta,
    /// Random low sine modes in all three components, normalized to unit size.
    Combined { seed: u64 },
}

fn bump(x: Point) -> f64 {
    (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin()
}

fn random_modes(rng: &mut ChaCha8Rng) -> ScalarField {
    let modes: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(1..4) as f64,
                rng.gen_range(1..4) as f64,
            )
        })
        .collect();
    Arc::new(move |x: Point| {
        modes
            .iter()
            .map(|&(a, k, l)| {
                a * (k * std::f64::consts::PI * x[0]).sin()
                    * (l * std::f64::consts::PI * x[1]).sin()
            })
            .sum()
    })
}

impl Family {
    /// The family member of unit scale.
    pub fn unit(&self) -> Perturbation {
        match *self {
            Family::Rho => Perturbation {
                rho: Some(Arc::new(|_| 1.0)),
                delta: 1.0,
                ..Default::default()
            },
            Family::Xi => Perturbation {
                xi: Some(Arc::new(bump)),
                delta: 1.0,
                ..Default::default()
            },
            Family::Eta => Perturbation {
                eta: Some(Arc::new(bump)),
                delta: 1.0,
                ..Default::default()
            },
            Family::Combined { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let raw = Perturbation {
                    xi: Some(random_modes(&mut rng)),
                    eta: Some(random_modes(&mut rng)),
                    rho: Some(random_modes(&mut rng)),
                    delta: 1.0,
                };
                let size = raw.size();
                Perturbation {
                    delta: 1.0 / size,
                    ..raw
                }
            }
        }
    }
}

fn field_norms(f: &ScalarField) -> (f64, f64) {
    // reference mesh for norms of the analytic components
    let mesh = Mesh::uniform(64).expect("valid mesh");
    let rule = Quadrature::degree4();
    let (mut l2, mut linf) = (0.0, 0.0f64);
    for t in 0..mesh.num_triangles() {
        for (x, w) in rule.on(mesh.corners(t)) {
            let v = f(x);
            l2 += w * v * v;
            linf = linf.max(v.abs());
        }
    }
    for &p in mesh.vertices() {
        linf = linf.max(f(p).abs());
    }
    (l2.sqrt(), linf)
}

impl Perturbation {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scaled(&self, delta: f64) -> Self {
        let mut p = self.clone();
        p.delta *= delta;
        p
    }

    /// delta (|xi|_L2 + |eta|_L2 + |rho|_Linf).
    pub fn size(&self) -> f64 {
        let mut s = 0.0;
        if let Some(xi) = &self.xi {
            s += field_norms(xi).0;
        }
        if let Some(eta) = &self.eta {
            s += field_norms(eta).0;
        }
        if let Some(rho) = &self.rho {
            s += field_norms(rho).1;
        }
        self.delta.abs() * s
    }

    pub fn is_zero(&self) -> bool {
        self.delta == 0.0 || (self.xi.is_none() && self.eta.is_none() && self.rho.is_none())
    }

    /// The perturbed problem.
    pub fn apply(&self, problem: &ProblemSpec) -> ProblemSpec {
        let mut p = problem.clone();
        if self.is_zero() {
            return p;
        }
        let d = self.delta;
        if let Some(xi) = self.xi.clone() {
            let f = problem.f.clone();
            p.f = Arc::new(move |x, y| {
                let v = f(x, y);
                Deriv2 {
                    value: v.value - d * xi(x),
                    ..v
                }
            });
        }
        if let Some(eta) = self.eta.clone() {
            let l_a = problem.l_a.clone();
            p.l_a = Arc::new(move |x, y| {
                let v = l_a(x, y);
                let e = d * eta(x);
                Deriv2 {
                    value: v.value + e * y,
                    d1: v.d1 + e,
                    d2: v.d2,
                }
            });
        }
        if let Some(rho) = self.rho.clone() {
            let l_b = problem.l_b.clone();
            p.l_b = Arc::new(move |x, y| {
                let v = l_b(x, y);
                Deriv2 {
                    value: v.value + d * rho(x),
                    ..v
                }
            });
        }
        p.name = format!("{}+perturbation", problem.name);
        p
    }
}

/// Minimizer of the perturbed discrete problem.
pub fn solve_perturbed(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    zeta: &Perturbation,
    config: &SolveConfig,
    bound: f64,
) -> Result<DiscreteSolution> {
    let size = zeta.size();
    if size > bound {
        return Err(Error::PerturbationTooLarge { size, bound });
    }
    solve_discrete_ocp(&zeta.apply(problem), mesh, config)
}

/// Ratio |y^xi_u - y_u|_L2 / |xi|_L2 for a fixed control.
pub fn state_sensitivity_ratio(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u: &ControlField,
    xi: &FeFunction,
) -> Result<f64> {
    let disc = Discretization::new(problem, mesh.clone())?;
    let (y0, _) = disc.state(u, None)?;
    let xi_q = xi.at_points(disc.quadrature());
    let mut b = disc.control_load(u);
    let extra = crate::fem::load_vector(mesh, disc.quadrature(), &xi_q);
    for (bi, e) in b.iter_mut().zip(extra) {
        *bi += e;
    }
    let (y1, _) = disc.state_from_load(&b, Some(&y0))?;
    Ok(y1.sub(&y0)?.norm(Norm::L2) / xi.norm(Norm::L2))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityRow {
    pub delta: f64,
    pub size: f64,
    pub control_l1: f64,
    pub state_l2: f64,
    pub gap: f64,
    pub converged: bool,
    /// Above the discretization floor and converged.
    pub fitted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
    pub floor: f64,
    /// Least-squares slope of log(control_l1) against log(size) over fitted rows.
    pub slope: Option<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl StabilityTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "delta,size,control_l1,state_l2,gap,converged,fitted")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
                r.delta, r.size, r.control_l1, r.state_l2, r.gap, r.converged, r.fitted
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Discretization floor 5 h |u_b - u_a|_Linf below which cell quantization dominates.
pub fn discretization_floor(mesh: &Mesh, nominal: &ControlField) -> f64 {
    let b = nominal.bounds();
    let width = (0..b.len()).map(|t| b.width(t)).fold(0.0, f64::max);
    5.0 * mesh.mesh_size() * width
}

/// Solves the perturbed problems delta * family for every delta and compares with the nominal solution.
pub fn stability_sweep(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    family: &Perturbation,
    scales: &[f64],
    config: &SolveConfig,
    nominal: Option<&DiscreteSolution>,
) -> Result<StabilityTable> {
    if scales.iter().any(|&d| d < 0.0 || !d.is_finite()) {
        return Err(Error::InvalidArgument(
            "perturbation scales must be nonnegative".into(),
        ));
    }
    let owned;
    let nominal = match nominal {
        Some(n) => n,
        None => {
            owned = solve_discrete_ocp(problem, mesh, config)?;
            &owned
        }
    };
    let rows: Vec<Result<StabilityRow>> = scales
        .par_iter()
        .map(|&delta| {
            let zeta = family.scaled(delta);
            let size = zeta.size();
            if delta == 0.0 {
                return Ok(StabilityRow {
                    delta,
                    size,
                    control_l1: 0.0,
                    state_l2: 0.0,
                    gap: nominal.report.final_gap,
                    converged: nominal.report.converged,
                    fitted: false,
                });
            }
            let sol = solve_perturbed(problem, mesh, &zeta, config, DEFAULT_BOUND)?;
            Ok(StabilityRow {
                delta,
                size,
                control_l1: distance(&sol.u, &nominal.u, Norm::L1)?,
                state_l2: sol.y.sub(&nominal.y)?.norm(Norm::L2),
                gap: sol.report.final_gap,
                converged: sol.report.converged,
                fitted: false,
            })
        })
        .collect();
    let mut rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let floor = discretization_floor(mesh, &nominal.u);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in rows.iter_mut() {
        r.fitted = r.converged && r.delta > 0.0 && r.control_l1 >= floor;
        if r.fitted {
            xs.push(r.size.ln());
            ys.push(r.control_l1.ln());
        }
    }
    let slope = if xs.len() >= 2 {
        Some(fit_slope(&xs, &ys))
    } else {
        None
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("mesh_level".into(), mesh.level().to_string());
    metadata.insert("cells".into(), mesh.num_triangles().to_string());
    metadata.insert("h".into(), format!("{:.16e}", mesh.mesh_size()));
    metadata.insert("problem".into(), problem.name.clone());
    Ok(StabilityTable {
        rows,
        floor,
        slope,
        metadata,
    })
}
