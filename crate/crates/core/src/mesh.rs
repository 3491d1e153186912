//! Conforming triangulations of the unit square.
//!
//! Uniform meshes split every grid square along the lower-left to
//! upper-right diagonal. Refinement splits each triangle into four
//! congruent children through its edge midpoints, so a refined uniform
//! mesh is again a uniform mesh with the same diagonal direction.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};

/// A point of the plane.
pub type Point = [f64; 2];

const BOUNDARY_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    level: usize,
}

/// Parent information produced by one refinement step.
#[derive(Debug, Clone)]
pub struct RefinementMap {
    /// Coarse triangle containing each fine triangle.
    pub cell_parent: Vec<usize>,
    /// Coarse edge endpoints of each fine vertex (`(i, i)` for vertices kept
    /// from the coarse mesh).
    pub vertex_parents: Vec<(usize, usize)>,
}

impl RefinementMap {
    /// Interpolates a coarse P1 field onto the fine mesh (exact for nested meshes).
    pub fn prolong_nodal(&self, coarse: &[f64]) -> Vec<f64> {
        self.vertex_parents
            .iter()
            .map(|&(a, b)| 0.5 * (coarse[a] + coarse[b]))
            .collect()
    }

    /// Copies a coarse P0 field onto the children of each cell.
    pub fn prolong_cells(&self, coarse: &[f64]) -> Vec<f64> {
        self.cell_parent.iter().map(|&p| coarse[p]).collect()
    }
}

fn on_unit_square_boundary(p: Point) -> bool {
    p[0].abs() <= BOUNDARY_TOL
        || (p[0] - 1.0).abs() <= BOUNDARY_TOL
        || p[1].abs() <= BOUNDARY_TOL
        || (p[1] - 1.0).abs() <= BOUNDARY_TOL
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl Mesh {
    /// Builds a mesh from raw parts, validating orientation and coverage of the unit square.
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        level: usize,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("no triangles".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
        }
        for (i, p) in vertices.iter().enumerate() {
            if !(p[0] >= -BOUNDARY_TOL
                && p[0] <= 1.0 + BOUNDARY_TOL
                && p[1] >= -BOUNDARY_TOL
                && p[1] <= 1.0 + BOUNDARY_TOL)
            {
                return Err(Error::InvalidMesh(format!(
                    "vertex {i} lies outside the unit square"
                )));
            }
        }
        let boundary = vertices
            .iter()
            .map(|&p| on_unit_square_boundary(p))
            .collect();
        let mesh = Self {
            vertices,
            triangles,
            boundary,
            level,
        };
        let total: f64 = (0..mesh.num_triangles()).map(|t| mesh.area(t)).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMesh(format!(
                "triangles cover area {total}, expected 1"
            )));
        }
        Ok(mesh)
    }

    /// Uniform mesh with `n` squares per side, each split into two right triangles.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument(
                "number of subdivisions must be at least 1".into(),
            ));
        }
        let idx = |i: usize, j: usize| j * (n + 1) + i;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v11, v01) =
                    (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        Self::from_parts(vertices, triangles, 0)
    }

    /// The unit square split by both diagonals: four triangles around the centre.
    pub fn crossed_square() -> Self {
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let triangles = vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
        Self::from_parts(vertices, triangles, 0).expect("static mesh is valid")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        signed_area(a, b, c)
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.corners(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Longest edge of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        dist(a, b).max(dist(b, c)).max(dist(c, a))
    }

    /// Mesh size `h`: the largest triangle diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| self.diameter(t))
            .fold(0.0, f64::max)
    }

    pub fn min_diameter(&self) -> f64 {
        (0..self.num_triangles())
            .map(|t| self.diameter(t))
            .fold(f64::INFINITY, f64::min)
    }

    /// Unique undirected edges, each as `(low, high)` vertex indices.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Splits each triangle into four congruent children.
    pub fn refine(&self) -> Mesh {
        self.refine_with_map().0
    }

    /// Refines and also returns the parent relation used for transferring fields.
    pub fn refine_with_map(&self) -> (Mesh, RefinementMap) {
        let mut vertices = self.vertices.clone();
        let mut vertex_parents: Vec<(usize, usize)> = (0..vertices.len()).map(|i| (i, i)).collect();
        let mut midpoint: HashMap<(usize, usize), usize> =
            HashMap::with_capacity(3 * self.triangles.len() / 2 + 8);
        let mut mid = |a: usize,
                       b: usize,
                       vertices: &mut Vec<Point>,
                       parents: &mut Vec<(usize, usize)>|
         -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                parents.push(key);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut cell_parent = Vec::with_capacity(4 * self.triangles.len());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let ab = mid(a, b, &mut vertices, &mut vertex_parents);
            let bc = mid(b, c, &mut vertices, &mut vertex_parents);
            let ca = mid(c, a, &mut vertices, &mut vertex_parents);
            triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            cell_parent.extend_from_slice(&[t; 4]);
        }
        let boundary = vertices
            .iter()
            .map(|&p| on_unit_square_boundary(p))
            .collect();
        let mesh = Mesh {
            vertices,
            triangles,
            boundary,
            level: self.level + 1,
        };
        (
            mesh,
            RefinementMap {
                cell_parent,
                vertex_parents,
            },
        )
    }

    /// Writes the mesh with optional nodal and cell fields as legacy ASCII VTK.
    pub fn write_vtk<W: Write>(
        &self,
        mut out: W,
        point_data: &[(&str, &[f64])],
        cell_data: &[(&str, &[f64])],
    ) -> Result<()> {
        writeln!(out, "# vtk DataFile Version 3.0")?;
        writeln!(out, "bangbang mesh level {}", self.level)?;
        writeln!(out, "ASCII")?;
        writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(out, "POINTS {} double", self.num_vertices())?;
        for p in &self.vertices {
            writeln!(out, "{:.17e} {:.17e} 0", p[0], p[1])?;
        }
        writeln!(
            out,
            "CELLS {} {}",
            self.num_triangles(),
            4 * self.num_triangles()
        )?;
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(out, "CELL_TYPES {}", self.num_triangles())?;
        for _ in &self.triangles {
            writeln!(out, "5")?;
        }
        if !point_data.is_empty() {
            writeln!(out, "POINT_DATA {}", self.num_vertices())?;
            for (name, values) in point_data {
                if values.len() != self.num_vertices() {
                    return Err(Error::InvalidArgument(format!(
                        "point field {name} has wrong length"
                    )));
                }
                writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
                for v in values.iter() {
                    writeln!(out, "{v:.17e}")?;
                }
            }
        }
        if !cell_data.is_empty() {
            writeln!(out, "CELL_DATA {}", self.num_triangles())?;
            for (name, values) in cell_data {
                if values.len() != self.num_triangles() {
                    return Err(Error::InvalidArgument(format!(
                        "cell field {name} has wrong length"
                    )));
                }
                writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default")?;
                for v in values.iter() {
                    writeln!(out, "{v:.17e}")?;
                }
            }
        }
        Ok(())
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        barycentric(self.corners(t), p)
    }
}

pub(crate) fn barycentric(tri: [Point; 3], p: Point) -> [f64; 3] {
    let area = signed_area(tri[0], tri[1], tri[2]);
    let l0 = signed_area(p, tri[1], tri[2]) / area;
    let l1 = signed_area(tri[0], p, tri[2]) / area;
    [l0, l1, 1.0 - l0 - l1]
}

/// See [`Mesh::uniform`].
pub fn build_uniform_mesh(n: usize) -> Result<Mesh> {
    Mesh::uniform(n)
}

/// See [`Mesh::refine`].
pub fn refine(mesh: &Mesh) -> Mesh {
    mesh.refine()
}

/// See [`Mesh::mesh_size`].
pub fn mesh_size(mesh: &Mesh) -> f64 {
    mesh.mesh_size()
}

/// Bucket grid for locating the triangle that contains a point.
pub struct PointLocator {
    mesh: std::sync::Arc<Mesh>,
    bins: usize,
    buckets: Vec<Vec<usize>>,
}

impl PointLocator {
    pub fn new(mesh: std::sync::Arc<Mesh>) -> Self {
        let bins = ((mesh.num_triangles() as f64).sqrt().ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); bins * bins];
        let cell =
            |x: f64| ((x * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize;
        for t in 0..mesh.num_triangles() {
            let c = mesh.corners(t);
            let (x0, x1) = (
                c.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
                c.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
            );
            let (y0, y1) = (
                c.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
                c.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
            );
            for j in cell(y0)..=cell(y1) {
                for i in cell(x0)..=cell(x1) {
                    buckets[j * bins + i].push(t);
                }
            }
        }
        Self {
            mesh,
            bins,
            buckets,
        }
    }

    /// Returns the containing triangle and the barycentric coordinates of `p`.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        let cell = |x: f64| {
            ((x * self.bins as f64).floor() as isize).clamp(0, self.bins as isize - 1) as usize
        };
        let bucket = &self.buckets[cell(p[1]) * self.bins + cell(p[0])];
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in bucket {
            let b = self.mesh.barycentric(t, p);
            let worst = b.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= -1e-12 {
                return Some((t, b));
            }
            if best.map_or(true, |(_, _, w)| worst > w) {
                best = Some((t, b, worst));
            }
        }
        best.filter(|&(_, _, w)| w > -1e-9).map(|(t, b, _)| (t, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_counts() {
        let m = Mesh::uniform(1).unwrap();
        assert_eq!(m.num_triangles(), 2);
        assert_eq!(m.num_vertices(), 4);
        assert!((m.mesh_size() - 2f64.sqrt()).abs() < 1e-15);
        let m = Mesh::uniform(2).unwrap();
        assert_eq!((m.num_triangles(), m.num_vertices()), (8, 9));
        assert!((m.mesh_size() - 2f64.sqrt() / 2.0).abs() < 1e-15);
        let m = Mesh::uniform(10).unwrap();
        assert!((m.mesh_size() - 2f64.sqrt() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_subdivisions() {
        assert!(matches!(Mesh::uniform(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn refine_quadruples_and_halves() {
        let m = Mesh::uniform(1).unwrap();
        let r = m.refine();
        assert_eq!(r.num_triangles(), 8);
        assert_eq!(r.level(), 1);
        assert!((r.mesh_size() - m.mesh_size() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn refinement_map_transfers_linear_fields_exactly() {
        let m = Mesh::uniform(3).unwrap();
        let (fine, map) = m.refine_with_map();
        let lin = |p: Point| 2.0 * p[0] - 3.0 * p[1] + 0.5;
        let coarse: Vec<f64> = m.vertices().iter().map(|&p| lin(p)).collect();
        let prolonged = map.prolong_nodal(&coarse);
        for (p, v) in fine.vertices().iter().zip(&prolonged) {
            assert!((lin(*p) - v).abs() < 1e-14);
        }
        let cells: Vec<f64> = (0..m.num_triangles()).map(|t| t as f64).collect();
        let fine_cells = map.prolong_cells(&cells);
        for t in 0..fine.num_triangles() {
            let parent = fine_cells[t] as usize;
            let b = m.barycentric(parent, fine.centroid(t));
            assert!(b.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn crossed_square_is_valid() {
        let m = Mesh::crossed_square();
        assert_eq!(m.num_triangles(), 4);
        assert!(!m.is_boundary(4));
    }

    #[test]
    fn locator_finds_points() {
        let m = Mesh::uniform(5).unwrap().refine();
        let loc = PointLocator::new(std::sync::Arc::new(m.clone()));
        for t in 0..m.num_triangles() {
            let c = m.centroid(t);
            assert_eq!(loc.locate(c).unwrap().0, t);
        }
        assert!(loc.locate([1.0, 1.0]).is_some());
    }

    #[test]
    fn vtk_export_has_sections() {
        let m = Mesh::uniform(2).unwrap();
        let vals = vec![1.0; m.num_vertices()];
        let mut buf = Vec::new();
        m.write_vtk(&mut buf, &[("y", &vals)], &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("CELLS 8 32"));
        assert!(text.contains("POINT_DATA 9"));
    }
}
