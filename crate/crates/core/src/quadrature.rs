//! Triangle quadrature rules, per-cell quadrature sets, and integration of
//! integrands that jump across level-set curves.

use crate::mesh::{barycentric, signed_area, Mesh, Point};

/// A quadrature rule on the reference triangle in barycentric coordinates.
/// Weights sum to one, so physical weights are `weight * |T|`.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub name: &'static str,
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    /// Six-point rule exact for polynomials of degree four (Strang-Fix/Dunavant).
    pub fn degree4() -> Self {
        const A: f64 = 0.445_948_490_915_964_886_32;
        const B: f64 = 0.091_576_213_509_770_743_46;
        const WA: f64 = 0.223_381_589_678_011_465_70;
        const WB: f64 = 0.109_951_743_655_321_867_64;
        let points = vec![
            [A, A, 1.0 - 2.0 * A],
            [A, 1.0 - 2.0 * A, A],
            [1.0 - 2.0 * A, A, A],
            [B, B, 1.0 - 2.0 * B],
            [B, 1.0 - 2.0 * B, B],
            [1.0 - 2.0 * B, B, B],
        ];
        Self {
            name: "degree4-6pt",
            degree: 4,
            points,
            weights: vec![WA, WA, WA, WB, WB, WB],
        }
    }

    /// Three interior points, exact for degree two.
    pub fn degree2() -> Self {
        let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
        Self {
            name: "degree2-3pt",
            degree: 2,
            points: vec![[a, b, b], [b, a, b], [b, b, a]],
            weights: vec![1.0 / 3.0; 3],
        }
    }

    pub fn centroid() -> Self {
        Self {
            name: "centroid",
            degree: 1,
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical points and weights on `tri`.
    pub fn on(&self, tri: [Point; 3]) -> impl Iterator<Item = (Point, f64)> + '_ {
        let area = signed_area(tri[0], tri[1], tri[2]).abs();
        self.points
            .iter()
            .zip(&self.weights)
            .map(move |(b, &w)| (from_bary(tri, *b), w * area))
    }

    pub fn integrate(&self, tri: [Point; 3], f: impl Fn(Point) -> f64) -> f64 {
        self.on(tri).map(|(x, w)| w * f(x)).sum()
    }
}

pub(crate) fn from_bary(tri: [Point; 3], b: [f64; 3]) -> Point {
    [
        b[0] * tri[0][0] + b[1] * tri[1][0] + b[2] * tri[2][0],
        b[0] * tri[0][1] + b[1] * tri[1][1] + b[2] * tri[2][1],
    ]
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        iter.into_iter().for_each(|v| s.add(v));
        s
    }
}

/// A quadrature point of a mesh cell.
#[derive(Debug, Clone, Copy)]
pub struct QPoint {
    pub x: Point,
    /// Barycentric coordinates with respect to the containing mesh cell.
    pub bary: [f64; 3],
    /// Physical weight (already multiplied by area).
    pub w: f64,
}

/// Quadrature points for every cell of a mesh.
///
/// Cells crossed by a data interface get a composite rule that follows the
/// interface; all other cells use the degree-4 rule. Every integral of a
/// discrete problem goes through the same set, which keeps the objective and
/// its derivatives mutually consistent.
#[derive(Debug, Clone)]
pub struct CellQuadrature {
    offsets: Vec<usize>,
    points: Vec<QPoint>,
    composite_cells: usize,
}

/// Subdivision depth of composite rules on cells crossed by a data interface.
pub const INTERFACE_DEPTH: usize = 3;

impl CellQuadrature {
    pub fn standard(mesh: &Mesh) -> Self {
        Self::build(mesh, None, 0)
    }

    pub fn with_interface(mesh: &Mesh, level_set: &dyn Fn(Point) -> f64, depth: usize) -> Self {
        Self::build(mesh, Some(level_set), depth)
    }

    fn build(mesh: &Mesh, level_set: Option<&dyn Fn(Point) -> f64>, depth: usize) -> Self {
        let rule = Quadrature::degree4();
        let piece_rule = Quadrature::degree2();
        let mut offsets = Vec::with_capacity(mesh.num_triangles() + 1);
        let mut points = Vec::with_capacity(mesh.num_triangles() * rule.len());
        let mut composite_cells = 0;
        let mut scratch = Vec::new();
        offsets.push(0);
        for t in 0..mesh.num_triangles() {
            let tri = mesh.corners(t);
            match level_set {
                Some(ls) if is_cut(tri, &[ls]) => {
                    composite_cells += 1;
                    scratch.clear();
                    subdivided_rule(tri, &[ls], depth, &rule, &piece_rule, &mut scratch);
                    points.extend(scratch.iter().map(|&(x, w)| QPoint {
                        x,
                        bary: barycentric(tri, x),
                        w,
                    }));
                }
                _ => {
                    let area = mesh.area(t);
                    points.extend(rule.points.iter().zip(&rule.weights).map(|(b, &w)| QPoint {
                        x: from_bary(tri, *b),
                        bary: *b,
                        w: w * area,
                    }));
                }
            }
            offsets.push(points.len());
        }
        Self {
            offsets,
            points,
            composite_cells,
        }
    }

    pub fn cell(&self, t: usize) -> &[QPoint] {
        &self.points[self.offsets[t]..self.offsets[t + 1]]
    }

    pub fn num_cells(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Number of cells that carry a composite interface rule.
    pub fn composite_cells(&self) -> usize {
        self.composite_cells
    }

    /// Flat index range of the points of cell `t`.
    pub fn range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    pub fn points(&self) -> &[QPoint] {
        &self.points
    }
}

/// Sample locations used to decide whether a level set changes sign on a triangle.
fn samples(tri: [Point; 3]) -> [Point; 7] {
    let m = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    [
        tri[0],
        tri[1],
        tri[2],
        m(tri[0], tri[1]),
        m(tri[1], tri[2]),
        m(tri[2], tri[0]),
        from_bary(tri, [1.0 / 3.0; 3]),
    ]
}

/// True when one of the level sets takes both signs on the sample points of `tri`.
pub fn is_cut(tri: [Point; 3], level_sets: &[&dyn Fn(Point) -> f64]) -> bool {
    let s = samples(tri);
    level_sets.iter().any(|ls| {
        let (mut pos, mut neg) = (false, false);
        for &p in &s {
            let v = ls(p);
            pos |= v > 0.0;
            neg |= v < 0.0;
        }
        pos && neg
    })
}

/// Splits a convex polygon along the zero line of `f`, returning the parts
/// where `f >= 0` and `f <= 0`. Exact when `f` is affine.
pub fn split_convex(poly: &[Point], f: impl Fn(Point) -> f64) -> (Vec<Point>, Vec<Point>) {
    let vals: Vec<f64> = poly.iter().map(|&p| f(p)).collect();
    let (mut pos, mut neg) = (
        Vec::with_capacity(poly.len() + 2),
        Vec::with_capacity(poly.len() + 2),
    );
    for i in 0..poly.len() {
        let j = (i + 1) % poly.len();
        let (p, q, fp, fq) = (poly[i], poly[j], vals[i], vals[j]);
        if fp >= 0.0 {
            pos.push(p);
        }
        if fp <= 0.0 {
            neg.push(p);
        }
        if (fp > 0.0 && fq < 0.0) || (fp < 0.0 && fq > 0.0) {
            let s = fp / (fp - fq);
            let r = [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])];
            pos.push(r);
            neg.push(r);
        }
    }
    (pos, neg)
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    fan(poly).map(|t| signed_area(t[0], t[1], t[2])).sum()
}

/// Fan triangulation of a convex polygon.
pub fn fan(poly: &[Point]) -> impl Iterator<Item = [Point; 3]> + '_ {
    (1..poly.len().saturating_sub(1)).map(move |i| [poly[0], poly[i], poly[i + 1]])
}

fn children(tri: [Point; 3]) -> [[Point; 3]; 4] {
    let m = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
    let (ab, bc, ca) = (m(tri[0], tri[1]), m(tri[1], tri[2]), m(tri[2], tri[0]));
    [
        [tri[0], ab, ca],
        [ab, tri[1], bc],
        [ca, bc, tri[2]],
        [ab, bc, ca],
    ]
}

/// Composite rule on `tri` refined toward the zero sets of `level_sets`.
///
/// Uncut sub-triangles use `smooth_rule`. Cut leaves at `depth` are split
/// along the linear interpolants of the level sets and `piece_rule` is
/// applied on each piece, so integrands that are smooth on either side of the
/// curves are integrated with an O(h^2 4^-depth) interface error.
pub fn subdivided_rule(
    tri: [Point; 3],
    level_sets: &[&dyn Fn(Point) -> f64],
    depth: usize,
    smooth_rule: &Quadrature,
    piece_rule: &Quadrature,
    out: &mut Vec<(Point, f64)>,
) {
    if !is_cut(tri, level_sets) {
        out.extend(smooth_rule.on(tri));
        return;
    }
    if depth > 0 {
        for child in children(tri) {
            subdivided_rule(child, level_sets, depth - 1, smooth_rule, piece_rule, out);
        }
        return;
    }
    let mut pieces = vec![tri.to_vec()];
    for ls in level_sets {
        let vals = [ls(tri[0]), ls(tri[1]), ls(tri[2])];
        let lin = |p: Point| {
            let b = barycentric(tri, p);
            b[0] * vals[0] + b[1] * vals[1] + b[2] * vals[2]
        };
        let mut next = Vec::with_capacity(2 * pieces.len());
        for poly in &pieces {
            let (pos, neg) = split_convex(poly, lin);
            for part in [pos, neg] {
                if part.len() >= 3 && polygon_area(&part) > 0.0 {
                    next.push(part);
                }
            }
        }
        pieces = next;
    }
    for poly in &pieces {
        for t in fan(poly) {
            if signed_area(t[0], t[1], t[2]).abs() > 0.0 {
                out.extend(piece_rule.on(t));
            }
        }
    }
}

/// Integrates `integrand` over `tri` when it jumps across the zero sets of `level_sets`.
pub fn integrate_piecewise(
    tri: [Point; 3],
    level_sets: &[&dyn Fn(Point) -> f64],
    integrand: &dyn Fn(Point) -> f64,
    depth: usize,
) -> f64 {
    let mut pts = Vec::new();
    subdivided_rule(
        tri,
        level_sets,
        depth,
        &Quadrature::degree4(),
        &Quadrature::degree2(),
        &mut pts,
    );
    pts.iter().map(|&(x, w)| w * integrand(x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_integral(p: u32, q: u32) -> f64 {
        // \int_{reference triangle} x^p y^q = p! q! / (p+q+2)!
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>();
        fact(p) * fact(q) / fact(p + q + 2)
    }

    #[test]
    fn degree4_rule_is_exact_to_degree_four() {
        let rule = Quadrature::degree4();
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(rule.weights.iter().all(|&w| w > 0.0));
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for p in 0..=4u32 {
            for q in 0..=(4 - p) {
                let approx = rule.integrate(tri, |x| x[0].powi(p as i32) * x[1].powi(q as i32));
                assert!(
                    (approx - monomial_integral(p, q)).abs() < 1e-15,
                    "x^{p} y^{q}"
                );
            }
        }
        let approx = rule.integrate(tri, |x| x[0].powi(6));
        assert!((approx - monomial_integral(6, 0)).abs() > 1e-8);
    }

    #[test]
    fn degree2_rule_is_exact_to_degree_two() {
        let rule = Quadrature::degree2();
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for (p, q) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
            let approx = rule.integrate(tri, |x| x[0].powi(p) * x[1].powi(q));
            assert!((approx - monomial_integral(p as u32, q as u32)).abs() < 1e-15);
        }
    }

    #[test]
    fn split_by_affine_preserves_area() {
        let tri = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let (pos, neg) = split_convex(&tri, |p| p[0] - 0.25);
        let (a, b) = (polygon_area(&pos), polygon_area(&neg));
        assert!((a + b - 0.5).abs() < 1e-15);
        // region x <= 1/4 inside the triangle: 1/2 - (3/4)^2/2
        assert!((b - (0.5 - 0.28125)).abs() < 1e-15);
    }

    #[test]
    fn piecewise_integration_of_disc_indicator() {
        let mesh = Mesh::uniform(8).unwrap();
        let ls = |p: Point| (p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2) - 0.09;
        let inside = |p: Point| if ls(p) < 0.0 { 1.0 } else { 0.0 };
        let total: f64 = (0..mesh.num_triangles())
            .map(|t| integrate_piecewise(mesh.corners(t), &[&ls], &inside, 6))
            .sum();
        assert!(
            (total - std::f64::consts::PI * 0.09).abs() < 1e-5,
            "{total}"
        );
    }

    #[test]
    fn interface_rule_keeps_cell_areas() {
        let mesh = Mesh::uniform(6).unwrap();
        let ls = |p: Point| p[0] + 0.3 * p[1] - 0.61;
        let q = CellQuadrature::with_interface(&mesh, &ls, INTERFACE_DEPTH);
        assert!(q.composite_cells() > 0);
        for t in 0..mesh.num_triangles() {
            let w: f64 = q.cell(t).iter().map(|p| p.w).sum();
            assert!((w - mesh.area(t)).abs() < 1e-15);
            for p in q.cell(t) {
                let x = from_bary(mesh.corners(t), p.bary);
                assert!((x[0] - p.x[0]).abs() < 1e-14 && (x[1] - p.x[1]).abs() < 1e-14);
            }
        }
    }
}
