//! Sample-based audits of the growth conditions and the critical cones.
//!
//! The audits estimate constants over seeded samples of feasible controls
//! near a candidate; they never prove that a condition holds.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{cell_norm, ControlField, ControlRep};
use crate::error::{Error, Result};
use crate::fem::{FeFunction, Norm, Normed};
use crate::mesh::Mesh;
use crate::objective::SwitchingField;
use crate::semilinear::{Discretization, ProblemSpec};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GrowthParams {
    pub gamma: f64,
    pub beta: f64,
    /// Cone parameter.
    pub tau: f64,
    /// L1 trust radius around the candidate.
    pub alpha: f64,
    /// Candidate growth constant.
    pub c: f64,
}

impl GrowthParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.5
            && self.gamma <= 1.0
            && (self.beta == 0.5 || self.beta == 1.0)
            && self.tau > 0.0
            && self.alpha > 0.0
            && self.c > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid growth parameters {self:?}"
            )))
        }
    }

    pub fn exponent(&self) -> f64 {
        1.0 + 1.0 / self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    CellFlips,
    Patch,
    Smooth,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Position in the seeded draw sequence.
    pub index: usize,
    pub kind: SampleKind,
    pub l1: f64,
    pub z_l1: f64,
    pub z_l2: f64,
    pub j1: f64,
    pub j2: f64,
    /// j1 + beta j2
    pub lhs: f64,
    /// lhs with beta = 1/2 and beta = 1
    pub lhs_half: f64,
    pub lhs_one: f64,
    pub rhs_l1: f64,
    pub rhs_z2: f64,
    pub rhs_mixed: f64,
    pub in_d: bool,
    pub in_g: bool,
    pub in_c: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthAudit {
    pub params: GrowthParams,
    pub samples: Vec<SampleRecord>,
    pub skipped: usize,
    /// min lhs / |u - u_bar|_L1^(1 + 1/gamma)
    pub c_hat: f64,
    /// min lhs / |z|_L2^2
    pub c_hat_z2: f64,
    /// min lhs / (|z|_L2 |u - u_bar|_L1)
    pub c_hat_mixed: f64,
    pub violations: usize,
    pub label: String,
}

impl GrowthAudit {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Indices of the k samples with the smallest growth ratio.
    pub fn worst(&self, k: usize) -> Vec<usize> {
        let e = self.params.exponent();
        let mut idx: Vec<usize> = (0..self.samples.len()).collect();
        idx.sort_by(|&a, &b| {
            let ra = self.samples[a].lhs / self.samples[a].l1.powf(e);
            let rb = self.samples[b].lhs / self.samples[b].l1.powf(e);
            ra.total_cmp(&rb)
        });
        idx.truncate(k);
        idx
    }
}

/// A feasible control near `u_bar` from one of three families.
pub fn sample_control(
    u_bar: &ControlField,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> (SampleKind, Vec<f64>) {
    let mesh = u_bar.mesh();
    let b = u_bar.bounds();
    let nt = mesh.num_triangles();
    let ub = u_bar.values();
    let opposite = |t: usize, rng: &mut ChaCha8Rng| {
        let (lo, hi) = (b.lower[t], b.upper[t]);
        if (ub[t] - lo).abs() < 1e-12 {
            hi
        } else if (ub[t] - hi).abs() < 1e-12 {
            lo
        } else if rng.gen_bool(0.5) {
            lo
        } else {
            hi
        }
    };
    let kind = match rng.gen_range(0..3) {
        0 => SampleKind::CellFlips,
        1 => SampleKind::Patch,
        _ => SampleKind::Smooth,
    };
    let mut u = ub.to_vec();
    match kind {
        SampleKind::CellFlips => {
            let k = rng.gen_range(1..=(nt / 20).max(1));
            for _ in 0..k {
                let t = rng.gen_range(0..nt);
                u[t] = opposite(t, rng);
            }
        }
        SampleKind::Patch => {
            let c = [rng.gen::<f64>(), rng.gen::<f64>()];
            let r = rng.gen_range(0.02..0.25);
            let s = rng.gen_range(0.1..=1.0);
            for t in 0..nt {
                let x = mesh.centroid(t);
                if (x[0] - c[0]).hypot(x[1] - c[1]) < r {
                    let target = opposite(t, rng);
                    u[t] = ub[t] + s * (target - ub[t]);
                }
            }
        }
        SampleKind::Smooth => {
            let modes: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(1..5) as f64,
                        rng.gen_range(1..5) as f64,
                        rng.gen_range(0.0..6.3),
                    )
                })
                .collect();
            let amp = rng.gen_range(0.05..2.0);
            let pi = std::f64::consts::PI;
            for t in 0..nt {
                let x = mesh.centroid(t);
                let phi: f64 = modes
                    .iter()
                    .map(|&(a, k, l, ph)| a * (k * pi * x[0] + ph).sin() * (l * pi * x[1]).sin())
                    .sum();
                u[t] = (ub[t] + amp * phi).clamp(b.lower[t], b.upper[t]);
            }
        }
    }
    let d: Vec<f64> = u.iter().zip(ub).map(|(a, b)| a - b).collect();
    let l1 = cell_norm(mesh, &d, Norm::L1);
    if l1 >= alpha {
        // pull back toward u_bar along the segment, which keeps feasibility
        let s = alpha * rng.gen_range(0.05..0.95) / l1;
        for (ui, di) in u.iter_mut().zip(&d) {
            *ui -= (1.0 - s) * di;
        }
        for (t, ui) in u.iter_mut().enumerate() {
            *ui = ui.clamp(b.lower[t], b.upper[t]);
        }
    }
    (kind, u)
}

/// Sign condition: v >= 0 where u_bar = u_a and v <= 0 where u_bar = u_b.
pub fn sign_condition(v: &[f64], u_bar: &ControlField) -> bool {
    let b = u_bar.bounds();
    v.iter().enumerate().all(|(t, &vt)| {
        let at_lo = (u_bar.values()[t] - b.lower[t]).abs() <= 1e-12;
        let at_hi = (u_bar.values()[t] - b.upper[t]).abs() <= 1e-12;
        (!at_lo || vt >= -1e-14) && (!at_hi || vt <= 1e-14)
    })
}

/// Membership of v in the cones D^tau and G^tau at u_bar, given J'(u_bar)v and z_{u_bar,v}.
pub fn cone_membership_from(
    v: &[f64],
    u_bar: &ControlField,
    sigma: &SwitchingField,
    tau: f64,
    j1: f64,
    z: &FeFunction,
) -> (bool, bool) {
    let sign = sign_condition(v, u_bar);
    let in_d = sign
        && v.iter()
            .zip(sigma.cell_means())
            .all(|(&vt, s)| s.abs() <= tau || vt == 0.0);
    let in_g = sign && j1 <= tau * z.norm(Norm::L1);
    (in_d, in_g)
}

/// Membership of v in D^tau and G^tau; linearizes the state equation at u_bar.
pub fn cone_membership(
    v: &ControlField,
    u_bar: &ControlField,
    sigma: &SwitchingField,
    tau: f64,
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
) -> Result<(bool, bool)> {
    let disc = Discretization::new(problem, mesh.clone())?;
    let (y, _) = disc.state(u_bar, None)?;
    let z = disc.linearization(&y)?.solve_cells(v.values())?;
    let j1 = sigma.pair(v.values());
    Ok(cone_membership_from(v.values(), u_bar, sigma, tau, j1, &z))
}

struct Audit<'a> {
    disc: &'a Discretization,
    u_bar: &'a ControlField,
}

struct Evaluated {
    index: usize,
    kind: SampleKind,
    d: Vec<f64>,
    l1: f64,
    z: FeFunction,
    j1: f64,
    j2: f64,
}

impl Audit<'_> {
    fn evaluate_samples(
        &self,
        params: &GrowthParams,
        n_samples: usize,
        seed: u64,
    ) -> Result<(Vec<Evaluated>, SwitchingField, usize)> {
        let sp = self.disc.evaluate(self.u_bar, None)?;
        let lin = self.disc.linearization(&sp.y)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<(SampleKind, Vec<f64>)> = (0..n_samples)
            .map(|_| sample_control(self.u_bar, params.alpha, &mut rng))
            .collect();
        let mesh = self.disc.mesh();
        let results: Vec<Result<Option<Evaluated>>> = draws
            .into_par_iter()
            .enumerate()
            .map(|(index, (kind, u))| {
                let d: Vec<f64> = u
                    .iter()
                    .zip(self.u_bar.values())
                    .map(|(a, b)| a - b)
                    .collect();
                let l1 = cell_norm(mesh, &d, Norm::L1);
                if l1 == 0.0 {
                    return Ok(None);
                }
                let dv = self.u_bar.with_values(d.clone())?;
                let z = lin.solve_cells(&d)?;
                let j1 = sp.sigma.pair(&d);
                let j2 = self.disc.second_derivative(
                    &lin,
                    self.u_bar,
                    &sp.p,
                    (&dv as &dyn ControlRep, &z),
                    (&dv as &dyn ControlRep, &z),
                );
                Ok(Some(Evaluated {
                    index,
                    kind,
                    d,
                    l1,
                    z,
                    j1,
                    j2,
                }))
            })
            .collect();
        let mut out = Vec::with_capacity(n_samples);
        let mut skipped = 0;
        for r in results {
            match r? {
                Some(e) => out.push(e),
                None => skipped += 1,
            }
        }
        Ok((out, sp.sigma, skipped))
    }
}

fn min_ratio(vals: impl Iterator<Item = (f64, f64)>) -> f64 {
    vals.filter(|&(_, den)| den > 0.0)
        .map(|(num, den)| num / den)
        .fold(f64::INFINITY, f64::min)
}

/// Replays the seeded sampler and returns draw `index`.
pub fn replay_sample(u_bar: &ControlField, alpha: f64, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = Vec::new();
    for _ in 0..=index {
        u = sample_control(u_bar, alpha, &mut rng).1;
    }
    u
}

/// Audits J'(u_bar)(u - u_bar) + beta J''(u_bar)(u - u_bar)^2 >= c |u - u_bar|^(1 + 1/gamma).
pub fn audit_growth(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u_bar: &ControlField,
    params: &GrowthParams,
    n_samples: usize,
    seed: u64,
) -> Result<GrowthAudit> {
    let disc = Discretization::new(problem, mesh.clone())?;
    audit_growth_with(&disc, u_bar, params, n_samples, seed)
}

pub fn audit_growth_with(
    disc: &Discretization,
    u_bar: &ControlField,
    params: &GrowthParams,
    n_samples: usize,
    seed: u64,
) -> Result<GrowthAudit> {
    params.validate()?;
    let audit = Audit { disc, u_bar };
    let (evals, sigma, skipped) = audit.evaluate_samples(params, n_samples, seed)?;
    let e = params.exponent();
    let samples: Vec<SampleRecord> = evals
        .iter()
        .map(|s| {
            let (z_l1, z_l2) = (s.z.norm(Norm::L1), s.z.norm(Norm::L2));
            let (in_d, in_g) = cone_membership_from(&s.d, u_bar, &sigma, params.tau, s.j1, &s.z);
            SampleRecord {
                index: s.index,
                kind: s.kind,
                l1: s.l1,
                z_l1,
                z_l2,
                j1: s.j1,
                j2: s.j2,
                lhs: s.j1 + params.beta * s.j2,
                lhs_half: s.j1 + 0.5 * s.j2,
                lhs_one: s.j1 + s.j2,
                rhs_l1: params.c * s.l1.powf(e),
                rhs_z2: params.c * z_l2 * z_l2,
                rhs_mixed: params.c * z_l2 * s.l1,
                in_d,
                in_g,
                in_c: in_d && in_g,
            }
        })
        .collect();
    let c_hat = min_ratio(samples.iter().map(|s| (s.lhs, s.l1.powf(e))));
    let c_hat_z2 = min_ratio(samples.iter().map(|s| (s.lhs, s.z_l2 * s.z_l2)));
    let c_hat_mixed = min_ratio(samples.iter().map(|s| (s.lhs, s.z_l2 * s.l1)));
    let violations = samples.iter().filter(|s| s.lhs <= 0.0).count();
    let label = if violations == 0 && c_hat > 0.0 {
        format!("no violation found among {} samples", samples.len())
    } else {
        format!("{violations} violations among {} samples", samples.len())
    };
    Ok(GrowthAudit {
        params: *params,
        samples,
        skipped,
        c_hat,
        c_hat_z2,
        c_hat_mixed,
        violations,
        label,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideRecord {
    pub l1: f64,
    /// J'(u)(u - u_bar)
    pub slide: f64,
    /// J(u) - J(u_bar)
    pub increment: f64,
    pub lhs_half: f64,
    pub lhs_one: f64,
    pub j2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlideReport {
    pub samples: Vec<SlideRecord>,
    /// min slide / l1^(1 + 1/gamma)
    pub mu_slide: f64,
    /// min increment / l1^(1 + 1/gamma)
    pub c_increment: f64,
    /// min lhs(beta = 1) / l1^(1 + 1/gamma)
    pub c_growth: f64,
    /// Samples passing one of slide form / growth with margin above 2 c_growth while failing the other.
    pub inconsistent: usize,
    /// mu of the lower bound J'' >= -mu l1^(1 + 1/gamma), when it holds.
    pub mu_lower: f64,
    /// Samples passing beta = 1/2 but failing beta = 1 with constant c_hat_half - mu/2.
    pub beta_relation_failures: usize,
}

/// Slide form J'(u)(u - u_bar) and full increment J(u) - J(u_bar) over samples.
pub fn verify_slide_form(
    problem: &ProblemSpec,
    mesh: &Arc<Mesh>,
    u_bar: &ControlField,
    params: &GrowthParams,
    n_samples: usize,
    seed: u64,
) -> Result<SlideReport> {
    params.validate()?;
    let disc = Discretization::new(problem, mesh.clone())?;
    let audit = Audit { disc: &disc, u_bar };
    let (evals, _, _) = audit.evaluate_samples(params, n_samples, seed)?;
    let base = disc.evaluate(u_bar, None)?;
    let e = params.exponent();
    let samples: Vec<Result<SlideRecord>> = evals
        .par_iter()
        .map(|s| {
            let u: Vec<f64> = u_bar
                .values()
                .iter()
                .zip(&s.d)
                .map(|(a, b)| a + b)
                .collect();
            let u = u_bar.with_values(u)?;
            let sp = disc.evaluate(&u, Some(&base.y))?;
            Ok(SlideRecord {
                l1: s.l1,
                slide: sp.sigma.pair(&s.d),
                increment: sp.j - base.j,
                lhs_half: s.j1 + 0.5 * s.j2,
                lhs_one: s.j1 + s.j2,
                j2: s.j2,
            })
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let pw = |s: &SlideRecord| s.l1.powf(e);
    let mu_slide = min_ratio(samples.iter().map(|s| (s.slide, pw(s))));
    let c_increment = min_ratio(samples.iter().map(|s| (s.increment, pw(s))));
    let c_growth = min_ratio(samples.iter().map(|s| (s.lhs_one, pw(s))));
    let c_half = min_ratio(samples.iter().map(|s| (s.lhs_half, pw(s))));
    let margin = 2.0 * c_growth.max(0.0);
    let inconsistent = samples
        .iter()
        .filter(|s| {
            let (g, sl) = (s.lhs_one / pw(s), s.slide / pw(s));
            (g > margin && sl <= 0.0) || (sl > margin && g <= 0.0)
        })
        .count();
    let mu_lower = samples.iter().map(|s| -s.j2 / pw(s)).fold(0.0f64, f64::max);
    let beta_relation_failures = if mu_lower < c_half {
        let c = c_half - 0.5 * mu_lower;
        samples
            .iter()
            .filter(|s| s.lhs_half >= c_half * pw(s) && s.lhs_one < c * pw(s) * (1.0 - 1e-9))
            .count()
    } else {
        0
    };
    Ok(SlideReport {
        samples,
        mu_slide,
        c_increment,
        c_growth,
        inconsistent,
        mu_lower,
        beta_relation_failures,
    })
}
