//! P1 finite elements: nodal fields, sparse operators, assembly, SPD solves and norms.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{fan, from_bary, split_convex, CellQuadrature, Quadrature};

/// Which norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Norm {
    L1,
    L2,
    Linf,
}

/// Fields that know their own Lebesgue norms.
pub trait Normed {
    fn norm(&self, which: Norm) -> f64;
}

pub fn norm<T: Normed + ?Sized>(u: &T, which: Norm) -> f64 {
    u.norm(which)
}

/// A continuous piecewise-linear field given by its vertex values.
#[derive(Debug, Clone)]
pub struct FeFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.num_vertices() {
            return Err(Error::InvalidArgument(format!(
                "{} nodal values for a mesh with {} vertices",
                values.len(),
                mesh.num_vertices()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_vertices();
        Self {
            mesh,
            values: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: Arc<Mesh>, f: impl Fn(Point) -> f64) -> Self {
        let values = mesh.vertices().iter().map(|&p| f(p)).collect();
        Self { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_dirichlet(&self) -> bool {
        self.mesh
            .boundary_flags()
            .iter()
            .zip(&self.values)
            .all(|(&b, &v)| !b || v == 0.0)
    }

    pub fn cell_values(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.mesh.triangles()[t];
        [self.values[a], self.values[b], self.values[c]]
    }

    pub fn eval_bary(&self, t: usize, bary: [f64; 3]) -> f64 {
        let v = self.cell_values(t);
        bary[0] * v[0] + bary[1] * v[1] + bary[2] * v[2]
    }

    pub fn gradient(&self, t: usize) -> [f64; 2] {
        let g = hat_gradients(self.mesh.corners(t));
        let v = self.cell_values(t);
        [
            v[0] * g[0][0] + v[1] * g[1][0] + v[2] * g[2][0],
            v[0] * g[0][1] + v[1] * g[1][1] + v[2] * g[2][1],
        ]
    }

    /// Values at every point of a quadrature set, in flat order.
    pub fn at_points(&self, quad: &CellQuadrature) -> Vec<f64> {
        let mut out = Vec::with_capacity(quad.num_points());
        for t in 0..quad.num_cells() {
            let v = self.cell_values(t);
            out.extend(
                quad.cell(t)
                    .iter()
                    .map(|q| q.bary[0] * v[0] + q.bary[1] * v[1] + q.bary[2] * v[2]),
            );
        }
        out
    }

    pub fn axpy(&mut self, alpha: f64, other: &FeFunction) -> Result<()> {
        if !Arc::ptr_eq(&self.mesh, &other.mesh)
            && self.mesh.num_vertices() != other.mesh.num_vertices()
        {
            return Err(Error::MeshMismatch);
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &FeFunction) -> Result<FeFunction> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// L2 distance to a smooth function, by the degree-4 rule on every cell.
    pub fn l2_error(&self, exact: impl Fn(Point) -> f64) -> f64 {
        let rule = Quadrature::degree4();
        let mut s = 0.0;
        for t in 0..self.mesh.num_triangles() {
            let tri = self.mesh.corners(t);
            let area = self.mesh.area(t);
            for (b, &w) in rule.points.iter().zip(&rule.weights) {
                let e = self.eval_bary(t, *b) - exact(from_bary(tri, *b));
                s += w * area * e * e;
            }
        }
        s.sqrt()
    }

    /// Integral of the field against a cellwise-constant function.
    pub fn integrate_against_cells(&self, cells: &[f64]) -> f64 {
        (0..self.mesh.num_triangles())
            .map(|t| {
                let v = self.cell_values(t);
                self.mesh.area(t) * cells[t] * (v[0] + v[1] + v[2]) / 3.0
            })
            .sum()
    }
}

impl Normed for FeFunction {
    fn norm(&self, which: Norm) -> f64 {
        match which {
            Norm::Linf => self.values.iter().fold(0.0, |m, v| m.max(v.abs())),
            Norm::L2 => {
                // exact for the quadratic integrand
                let mut s = 0.0;
                for t in 0..self.mesh.num_triangles() {
                    let [a, b, c] = self.cell_values(t);
                    s += self.mesh.area(t) / 6.0 * (a * a + b * b + c * c + a * b + b * c + c * a);
                }
                s.sqrt()
            }
            Norm::L1 => {
                let rule = Quadrature::degree2();
                let mut s = 0.0;
                for t in 0..self.mesh.num_triangles() {
                    let tri = self.mesh.corners(t);
                    let v = self.cell_values(t);
                    if v.iter().all(|&x| x >= 0.0) || v.iter().all(|&x| x <= 0.0) {
                        s += self.mesh.area(t) * (v[0] + v[1] + v[2]).abs() / 3.0;
                        continue;
                    }
                    let lin = |p: Point| {
                        let b = crate::mesh::barycentric(tri, p);
                        b[0] * v[0] + b[1] * v[1] + b[2] * v[2]
                    };
                    let (pos, neg) = split_convex(&tri, lin);
                    for piece in [pos, neg] {
                        for sub in fan(&piece) {
                            s += rule.integrate(sub, |p| lin(p).abs());
                        }
                    }
                }
                s
            }
        }
    }
}

/// Gradients of the three barycentric hat functions on a triangle.
pub fn hat_gradients(tri: [Point; 3]) -> [[f64; 2]; 3] {
    let [p0, p1, p2] = tri;
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    [
        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
        [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
        [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
    ]
}

/// Square sparse matrix in compressed-row form with sorted column indices.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        n: usize,
        mut triplets: Vec<(usize, usize, f64)>,
        symmetric: bool,
    ) -> Self {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
            symmetric,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_symmetric_flagged(&self) -> bool {
        self.symmetric
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&j).map(|k| v[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// x^T A y
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(self.apply(y)).map(|(a, b)| a * b).sum()
    }

    pub fn sum_entries(&self) -> f64 {
        self.vals.iter().sum()
    }

    /// Largest |A_ij - A_ji| relative to the largest |A_ij|.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                worst = worst.max((a - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    /// self + alpha * other, merging sparsity patterns.
    pub fn add_scaled(&self, alpha: f64, other: &SparseOperator) -> SparseOperator {
        assert_eq!(self.n, other.n);
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        let mut cols = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut vals = Vec::with_capacity(self.nnz().max(other.nnz()));
        row_ptr.push(0);
        for i in 0..self.n {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let ja = ca.get(p).copied().unwrap_or(usize::MAX);
                let jb = cb.get(q).copied().unwrap_or(usize::MAX);
                if ja == jb {
                    cols.push(ja);
                    vals.push(va[p] + alpha * vb[q]);
                    p += 1;
                    q += 1;
                } else if ja < jb {
                    cols.push(ja);
                    vals.push(va[p]);
                    p += 1;
                } else {
                    cols.push(jb);
                    vals.push(alpha * vb[q]);
                    q += 1;
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator {
            n: self.n,
            row_ptr,
            cols,
            vals,
            symmetric: self.symmetric && other.symmetric,
        }
    }

    /// Symmetric elimination of the flagged rows and columns, with 1 on their diagonal.
    pub fn eliminate_dirichlet(&self, fixed: &[bool]) -> SparseOperator {
        let mut out = self.clone();
        for i in 0..self.n {
            let r = out.row_ptr[i]..out.row_ptr[i + 1];
            for k in r {
                let j = out.cols[k];
                if fixed[i] || fixed[j] {
                    out.vals[k] = if i == j { 1.0 } else { 0.0 };
                }
            }
            if fixed[i] && out.get(i, i) == 0.0 {
                // diagonal missing from the pattern; cannot happen for assembled P1 operators
                panic!("row {i} has no diagonal entry");
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                row[j] = a;
            }
        }
        d
    }
}

/// Matrix-valued coefficient callback a_ij(x).
pub type CoefficientFn = dyn Fn(Point) -> [[f64; 2]; 2] + Send + Sync;

/// Stiffness matrix of the form sum_ij a_ij d_i y d_j z.
pub fn assemble_stiffness(mesh: &Mesh, a_coeff: &CoefficientFn) -> Result<SparseOperator> {
    let rule = Quadrature::degree4();
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    let mut symmetric = true;
    for (t, tri_idx) in mesh.triangles().iter().enumerate() {
        let tri = mesh.corners(t);
        let g = hat_gradients(tri);
        let area = mesh.area(t);
        let mut a = [[0.0; 2]; 2];
        for (b, &w) in rule.points.iter().zip(&rule.weights) {
            let m = a_coeff(from_bary(tri, *b));
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "diffusion coefficient",
                    triangle: t,
                });
            }
            for r in 0..2 {
                for c in 0..2 {
                    a[r][c] += w * area * m[r][c];
                }
            }
        }
        symmetric &= a[0][1] == a[1][0];
        for i in 0..3 {
            for j in 0..3 {
                let ag = [
                    a[0][0] * g[j][0] + a[0][1] * g[j][1],
                    a[1][0] * g[j][0] + a[1][1] * g[j][1],
                ];
                trip.push((tri_idx[i], tri_idx[j], g[i][0] * ag[0] + g[i][1] * ag[1]));
            }
        }
    }
    Ok(SparseOperator::from_triplets(
        mesh.num_vertices(),
        trip,
        symmetric,
    ))
}

/// Mass matrix weighted by `weight`, given at every point of `quad`.
pub fn assemble_weighted_mass(
    mesh: &Mesh,
    quad: &CellQuadrature,
    weight: &[f64],
) -> Result<SparseOperator> {
    let mut trip = Vec::with_capacity(9 * mesh.num_triangles());
    for (t, tri_idx) in mesh.triangles().iter().enumerate() {
        let mut m = [[0.0; 3]; 3];
        for (k, q) in quad.range(t).zip(quad.cell(t)) {
            let c = weight[k];
            if !c.is_finite() {
                return Err(Error::NonFinite {
                    what: "mass weight",
                    triangle: t,
                });
            }
            if c < 0.0 {
                return Err(Error::NegativeWeight {
                    triangle: t,
                    value: c,
                });
            }
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += q.w * c * q.bary[i] * q.bary[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri_idx[i], tri_idx[j], m[i][j]));
            }
        }
    }
    Ok(SparseOperator::from_triplets(
        mesh.num_vertices(),
        trip,
        true,
    ))
}

/// Unweighted P1 mass matrix.
pub fn assemble_mass(mesh: &Mesh) -> SparseOperator {
    let quad = CellQuadrature::standard(mesh);
    assemble_weighted_mass(mesh, &quad, &vec![1.0; quad.num_points()])
        .expect("unit weight is admissible")
}

/// Load vector b_i = integral of g * phi_i, with g given at the points of `quad`.
pub fn load_vector(mesh: &Mesh, quad: &CellQuadrature, g: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_vertices()];
    for (t, tri_idx) in mesh.triangles().iter().enumerate() {
        for (k, q) in quad.range(t).zip(quad.cell(t)) {
            for i in 0..3 {
                b[tri_idx[i]] += q.w * g[k] * q.bary[i];
            }
        }
    }
    b
}

/// Load vector of a cellwise-constant datum (exact).
pub fn load_vector_cells(mesh: &Mesh, cells: &[f64]) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_vertices()];
    for (t, tri_idx) in mesh.triangles().iter().enumerate() {
        let share = mesh.area(t) * cells[t] / 3.0;
        for &v in tri_idx {
            b[v] += share;
        }
    }
    b
}

pub fn zero_dirichlet(mesh: &Mesh, b: &mut [f64]) {
    for (bi, &fixed) in b.iter_mut().zip(mesh.boundary_flags()) {
        if fixed {
            *bi = 0.0;
        }
    }
}

/// Settings of the sparse SPD solver.
#[derive(Debug, Clone, Copy)]
pub struct SpdSolver {
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Systems up to this size are factorized densely.
    pub dense_limit: usize,
}

impl Default for SpdSolver {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: 20_000,
            dense_limit: 200,
        }
    }
}

enum Preconditioner {
    Ic0 {
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<f64>,
    },
    Jacobi(Vec<f64>),
}

impl Preconditioner {
    fn new(a: &SparseOperator) -> Self {
        Self::ic0(a).unwrap_or_else(|| {
            Preconditioner::Jacobi(a.diagonal().iter().map(|d| 1.0 / d).collect())
        })
    }

    /// Incomplete Cholesky on the lower pattern; `None` on a non-positive pivot.
    fn ic0(a: &SparseOperator) -> Option<Self> {
        let n = a.dim();
        let mut row_ptr = vec![0usize];
        let mut cols = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        for i in 0..n {
            let (c, v) = a.row(i);
            let start = cols.len();
            for (&j, &aij) in c.iter().zip(v) {
                if j > i {
                    break;
                }
                if j == i {
                    let d = aij - vals[start..].iter().map(|l| l * l).sum::<f64>();
                    if d <= 0.0 || !d.is_finite() {
                        return None;
                    }
                    cols.push(i);
                    vals.push(d.sqrt());
                    continue;
                }
                // dot of the already computed parts of rows i and j, without the diagonal of j
                let (ri, rj) = (start..cols.len(), row_ptr[j]..row_ptr[j + 1] - 1);
                let mut s = 0.0;
                let (mut p, mut q) = (ri.start, rj.start);
                while p < ri.end && q < rj.end {
                    match cols[p].cmp(&cols[q]) {
                        std::cmp::Ordering::Equal => {
                            s += vals[p] * vals[q];
                            p += 1;
                            q += 1;
                        }
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                    }
                }
                let ljj = vals[row_ptr[j + 1] - 1];
                cols.push(j);
                vals.push((aij - s) / ljj);
            }
            if cols.last() != Some(&i) {
                return None;
            }
            row_ptr.push(cols.len());
        }
        Some(Preconditioner::Ic0 {
            row_ptr,
            cols,
            vals,
        })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Jacobi(d) => {
                for i in 0..r.len() {
                    z[i] = d[i] * r[i];
                }
            }
            Preconditioner::Ic0 {
                row_ptr,
                cols,
                vals,
            } => {
                let n = r.len();
                for i in 0..n {
                    let (s, e) = (row_ptr[i], row_ptr[i + 1]);
                    let mut acc = r[i];
                    for k in s..e - 1 {
                        acc -= vals[k] * z[cols[k]];
                    }
                    z[i] = acc / vals[e - 1];
                }
                for i in (0..n).rev() {
                    let (s, e) = (row_ptr[i], row_ptr[i + 1]);
                    z[i] /= vals[e - 1];
                    let zi = z[i];
                    for k in s..e - 1 {
                        z[cols[k]] -= vals[k] * zi;
                    }
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn residual(a: &SparseOperator, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a.apply(x);
    b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect()
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

impl SpdSolver {
    pub fn solve(&self, a: &SparseOperator, b: &[f64], x0: Option<&[f64]>) -> Result<Vec<f64>> {
        let n = a.dim();
        let bnorm = norm2(b);
        if bnorm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let target = self.rel_tol * bnorm;
        if n <= self.dense_limit {
            let x = dense_cholesky_solve(&a.to_dense(), b).ok_or(Error::NotSymmetric)?;
            let res = norm2(&residual(a, &x, b));
            if res <= target {
                return Ok(x);
            }
            // refine once; dense Cholesky is backward stable so this is rarely needed
            return self.pcg(a, b, Some(&x), target, bnorm);
        }
        self.pcg(a, b, x0, target, bnorm)
    }

    fn pcg(
        &self,
        a: &SparseOperator,
        b: &[f64],
        x0: Option<&[f64]>,
        target: f64,
        bnorm: f64,
    ) -> Result<Vec<f64>> {
        let n = a.dim();
        let pre = Preconditioner::new(a);
        let mut x = x0.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let mut r = residual(a, &x, b);
        let mut z = vec![0.0; n];
        pre.apply(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let mut it = 0;
        loop {
            let rn = norm2(&r);
            if rn <= 0.5 * target {
                let true_res = norm2(&residual(a, &x, b));
                if true_res <= target {
                    return Ok(x);
                }
                r = residual(a, &x, b);
                pre.apply(&r, &mut z);
                p.copy_from_slice(&z);
                rz = dot(&r, &z);
            }
            if it >= self.max_iter {
                let true_res = norm2(&residual(a, &x, b));
                if true_res <= target {
                    return Ok(x);
                }
                return Err(Error::LinearSolver {
                    iterations: it,
                    residual: true_res / bnorm,
                });
            }
            a.matvec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                return Err(Error::LinearSolver {
                    iterations: it,
                    residual: norm2(&r) / bnorm,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            pre.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            it += 1;
        }
    }
}

/// Solves `A x = b` for an SPD operator with default settings.
pub fn solve_spd(a: &SparseOperator, b: &[f64]) -> Result<Vec<f64>> {
    SpdSolver::default().solve(a, b, None)
}

/// Dense Cholesky solve; `None` when the matrix is not positive definite.
pub fn dense_cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}
