//! Problems with a known bang-bang solution.
//!
//! The exact state is `Y sin(pi x1) sin(pi x2)`, the exact adjoint a sine mode,
//! and the switching function vanishes on the circle |x - c| = r. Its profile
//! across the circle fixes the exponent gamma of the measure condition
//! |{|sigma| <= eps}| <= K eps^gamma. The nonlinearity, tracking target and
//! L_b are then chosen so that (y, p, u) satisfies the optimality system.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::semilinear::{Deriv2, ProblemSpec, ScalarField};

pub const STATE_AMPLITUDE: f64 = 0.5;
pub const ADJOINT_AMPLITUDE: f64 = 0.2;
pub const SWITCH_SCALE: f64 = 1.0;
pub const CENTER: Point = [0.5, 0.5];
pub const RADIUS: f64 = 0.37;
/// Coupling L_{b,y} of the affine-general variant.
pub const KAPPA: f64 = 0.1;

const MC_POINTS: usize = 1_000_000;
const MC_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// L_b depends on x only.
    Tracking,
    /// L_b = l(x) + kappa y.
    AffineGeneral,
}

/// A sin(kx pi x1) sin(ky pi x2).
#[derive(Debug, Clone, Copy)]
pub struct SineMode {
    pub amplitude: f64,
    pub kx: f64,
    pub ky: f64,
}

impl SineMode {
    pub fn value(&self, x: Point) -> f64 {
        self.amplitude * (self.kx * PI * x[0]).sin() * (self.ky * PI * x[1]).sin()
    }

    pub fn laplacian(&self, x: Point) -> f64 {
        -(self.kx * self.kx + self.ky * self.ky) * PI * PI * self.value(x)
    }
}

/// Level set |x - c|^2 - r^2 of the switching circle.
pub fn circle(x: Point) -> f64 {
    (x[0] - CENTER[0]).powi(2) + (x[1] - CENTER[1]).powi(2) - RADIUS * RADIUS
}

/// Switching profile S r^2 sign(D) |D / r^2|^(1/gamma).
pub fn switching_profile(gamma: f64, x: Point) -> f64 {
    let d = circle(x) / (RADIUS * RADIUS);
    SWITCH_SCALE * RADIUS * RADIUS * d.signum() * d.abs().powf(1.0 / gamma)
}

/// A manufactured problem together with its exact solution.
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub problem: ProblemSpec,
    pub gamma: f64,
    pub variant: Option<Variant>,
    pub y_bar: ScalarField,
    pub p_bar: ScalarField,
    pub sigma_bar: ScalarField,
    pub u_bar: ScalarField,
    /// Level set whose zero set is the switching curve of u_bar.
    pub switching_curve: ScalarField,
    lap_y: ScalarField,
    lap_p: ScalarField,
    /// Measure ratios |{|sigma| <= eps}| / eps^gamma from the Monte Carlo check.
    pub measure_ratios: Vec<(f64, f64)>,
}

impl std::fmt::Debug for ManufacturedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManufacturedProblem")
            .field("name", &self.problem.name)
            .field("gamma", &self.gamma)
            .field("measure_ratios", &self.measure_ratios)
            .finish()
    }
}

fn bang(sigma: f64, lower: f64, upper: f64) -> f64 {
    if sigma > 0.0 {
        lower
    } else {
        upper
    }
}

/// Builds the manufactured problem with measure exponent `gamma` in [1/2, 1].
pub fn make_manufactured(gamma: f64, variant: Variant) -> Result<ManufacturedProblem> {
    if !(0.5..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma = {gamma} outside [1/2, 1]"
        )));
    }
    let ys = SineMode {
        amplitude: STATE_AMPLITUDE,
        kx: 1.0,
        ky: 1.0,
    };
    let ps = SineMode {
        amplitude: ADJOINT_AMPLITUDE,
        kx: 2.0,
        ky: 1.0,
    };
    let kappa = match variant {
        Variant::Tracking => 0.0,
        Variant::AffineGeneral => KAPPA,
    };
    let (lo, hi) = (-1.0, 1.0);
    let sigma = move |x: Point| switching_profile(gamma, x);
    let u_bar = move |x: Point| bang(sigma(x), lo, hi);
    // -Lap y + y^3 + g = u
    let g = move |x: Point| u_bar(x) + ys.laplacian(x) - ys.value(x).powi(3);
    // -Lap p + 3 y^2 p = (y - y_d) + kappa u
    let y_d = move |x: Point| {
        let (y, p) = (ys.value(x), ps.value(x));
        y + kappa * u_bar(x) - (-ps.laplacian(x) + 3.0 * y * y * p)
    };
    // sigma = p + l + kappa y
    let ell = move |x: Point| sigma(x) - ps.value(x) - kappa * ys.value(x);

    let name = match variant {
        Variant::Tracking => format!("manufactured-tracking-gamma{gamma}"),
        Variant::AffineGeneral => format!("manufactured-affine-gamma{gamma}"),
    };
    let problem = ProblemSpec::new(
        name,
        Arc::new(move |x, y| Deriv2::new(y * y * y + g(x), 3.0 * y * y, 6.0 * y)),
        Arc::new(move |x, y| {
            let d = y - y_d(x);
            Deriv2::new(0.5 * d * d, d, 1.0)
        }),
        Arc::new(move |x, y| Deriv2::new(ell(x) + kappa * y, kappa, 0.0)),
    )
    .with_bounds(lo, hi)
    .with_interface(Arc::new(circle));

    let mut mp = ManufacturedProblem {
        problem,
        gamma,
        variant: Some(variant),
        y_bar: Arc::new(move |x| ys.value(x)),
        p_bar: Arc::new(move |x| ps.value(x)),
        sigma_bar: Arc::new(sigma),
        u_bar: Arc::new(u_bar),
        switching_curve: Arc::new(circle),
        lap_y: Arc::new(move |x| ys.laplacian(x)),
        lap_p: Arc::new(move |x| ps.laplacian(x)),
        measure_ratios: Vec::new(),
    };
    mp.measure_ratios = measure_check(&mp)?;
    let (state, adjoint) = mp.residuals(1000, 7);
    if state > 1e-10 || adjoint > 1e-10 {
        return Err(Error::Construction(format!(
            "residuals {state:e} / {adjoint:e} exceed 1e-10"
        )));
    }
    Ok(mp)
}

/// A problem whose switching function vanishes on the disc |x - c| < r.
///
/// Inside the disc the optimal control takes the interior value 0; outside it
/// is at the lower bound. The state equation and the objective are affine in
/// y, so J is affine in u and the growth condition fails for directions
/// supported in the disc.
pub fn make_degenerate() -> Result<ManufacturedProblem> {
    let ys = SineMode {
        amplitude: STATE_AMPLITUDE,
        kx: 1.0,
        ky: 1.0,
    };
    let (lo, hi) = (-1.0, 1.0);
    let sigma = |x: Point| SWITCH_SCALE * circle(x).max(0.0).powi(2) / (RADIUS * RADIUS);
    let u_bar = move |x: Point| if circle(x) > 0.0 { lo } else { 0.0 };
    // -Lap y + y + g = u
    let g = move |x: Point| u_bar(x) + ys.laplacian(x) - ys.value(x);
    // L_a = 0, so p = 0 and sigma = L_b
    let problem = ProblemSpec::new(
        "manufactured-degenerate",
        Arc::new(move |x, y| Deriv2::new(y + g(x), 1.0, 0.0)),
        Arc::new(|_, _| Deriv2::ZERO),
        Arc::new(move |x, _| Deriv2::new(sigma(x), 0.0, 0.0)),
    )
    .with_bounds(lo, hi)
    .with_interface(Arc::new(circle));
    let mp = ManufacturedProblem {
        problem,
        gamma: 1.0,
        variant: None,
        y_bar: Arc::new(move |x| ys.value(x)),
        p_bar: Arc::new(|_| 0.0),
        sigma_bar: Arc::new(sigma),
        u_bar: Arc::new(u_bar),
        switching_curve: Arc::new(circle),
        lap_y: Arc::new(move |x| ys.laplacian(x)),
        lap_p: Arc::new(|_| 0.0),
        measure_ratios: Vec::new(),
    };
    let (state, adjoint) = mp.residuals(1000, 7);
    if state > 1e-10 || adjoint > 1e-10 {
        return Err(Error::Construction(format!(
            "residuals {state:e} / {adjoint:e} exceed 1e-10"
        )));
    }
    Ok(mp)
}

impl ManufacturedProblem {
    /// Largest pointwise residuals of the state and adjoint equations at random points.
    pub fn residuals(&self, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut rs, mut ra) = (0.0f64, 0.0f64);
        let pr = &self.problem;
        for _ in 0..samples {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let (y, p, u) = ((self.y_bar)(x), (self.p_bar)(x), (self.u_bar)(x));
            let f = (pr.f)(x, y);
            rs = rs.max((-(self.lap_y)(x) + f.value - u).abs());
            let l_y = (pr.l_a)(x, y).d1 + (pr.l_b)(x, y).d1 * u;
            ra = ra.max((-(self.lap_p)(x) + f.d1 * p - l_y).abs());
            let s = p + (pr.l_b)(x, y).value;
            rs = rs.max((s - (self.sigma_bar)(x)).abs());
        }
        (rs, ra)
    }

    /// True when u_bar equals the bang-bang value of sigma_bar wherever |sigma_bar| > tol.
    pub fn sign_consistent(&self, samples: usize, seed: u64, tol: f64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples).all(|_| {
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let (s, u) = ((self.sigma_bar)(x), (self.u_bar)(x));
            let (lo, hi) = ((self.problem.u_a)(x), (self.problem.u_b)(x));
            s.abs() <= tol || (s > 0.0 && u == lo) || (s < 0.0 && u == hi)
        })
    }
}

/// Monte Carlo estimate of |{|sigma| <= eps}| for several eps.
pub fn small_set_measure(
    sigma: &dyn Fn(Point) -> f64,
    eps: &[f64],
    points: usize,
    seed: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; eps.len()];
    for _ in 0..points {
        let s = sigma([rng.gen::<f64>(), rng.gen::<f64>()]).abs();
        for (c, &e) in counts.iter_mut().zip(eps) {
            if s <= e {
                *c += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / points as f64)
        .collect()
}

fn measure_check(mp: &ManufacturedProblem) -> Result<Vec<(f64, f64)>> {
    let eps = [1e-2, 1e-3, 1e-4];
    let meas = small_set_measure(mp.sigma_bar.as_ref(), &eps, MC_POINTS, MC_SEED);
    let ratios: Vec<(f64, f64)> = eps
        .iter()
        .zip(&meas)
        .map(|(&e, &m)| (e, m / e.powf(mp.gamma)))
        .collect();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &(_, r)| {
            (a.min(r), b.max(r))
        });
    // bounded above, and not degenerate toward a smaller exponent
    if !(hi < 1e2 && lo > 0.0 && hi / lo < 4.0) {
        return Err(Error::Construction(format!(
            "measure ratios {ratios:?} do not match gamma = {}",
            mp.gamma
        )));
    }
    Ok(ratios)
}
