//! Quadrilateral meshes of planar domains.
//!
//! Cells are stored as four counter-clockwise vertex indices. The reference
//! square `[0,1]²` is mapped onto each cell by the bilinear map
//! `F(x̂) = Σ_a N_a(x̂) P_a` with corners ordered `(0,0), (1,0), (1,1), (0,1)`.
//! Local edge `l` of a cell runs from local vertex `l` to `l + 1 (mod 4)`, so
//! edge 0 is `ŷ = 0`, edge 1 is `x̂ = 1`, edge 2 is `ŷ = 1` and edge 3 is `x̂ = 0`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::refelem::gauss_legendre;
use crate::{Error, Point2, Result};

const REF_CORNERS: [Point2; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];

/// Axis-aligned rectangle `(x0, x1) × (y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn unit() -> Self {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// A side of a rectangular domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// One edge of the skeleton.
///
/// The normal points from the `minus` cell to the `plus` cell, and outward on
/// the boundary. The minus cell is always the one with the lower index.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeInfo {
    pub endpoints: [usize; 2],
    pub cell_minus: usize,
    pub local_minus: usize,
    pub cell_plus: Option<usize>,
    pub local_plus: Option<usize>,
    pub unit_normal: Point2,
    pub length: f64,
    /// Set on boundary edges of ∂_D Ω; always false for interior edges.
    pub dirichlet: bool,
}

impl EdgeInfo {
    pub fn is_interior(&self) -> bool {
        self.cell_plus.is_some()
    }

    /// The same interior edge seen with the opposite orientation.
    pub fn flipped(&self) -> Result<EdgeInfo> {
        let (Some(plus), Some(lplus)) = (self.cell_plus, self.local_plus) else {
            return Err(Error::InvalidArgument(
                "a boundary edge cannot be flipped".into(),
            ));
        };
        Ok(EdgeInfo {
            endpoints: self.endpoints,
            cell_minus: plus,
            local_minus: lplus,
            cell_plus: Some(self.cell_minus),
            local_plus: Some(self.local_minus),
            unit_normal: [-self.unit_normal[0], -self.unit_normal[1]],
            length: self.length,
            dirichlet: false,
        })
    }

    /// Cells of the patch ω(e) with their local edge indices, minus side first.
    pub fn patch(&self) -> impl Iterator<Item = (TraceSide, usize, usize)> + '_ {
        std::iter::once((TraceSide::Minus, self.cell_minus, self.local_minus)).chain(
            self.cell_plus
                .zip(self.local_plus)
                .map(|(c, l)| (TraceSide::Plus, c, l)),
        )
    }
}

/// Which adjacent cell a trace is taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceSide {
    Minus,
    Plus,
}

/// A quadrature point on an edge, seen from one adjacent cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub reference: Point2,
    pub physical: Point2,
    pub weight: f64,
}

/// Quadrilateral mesh with its edge skeleton.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<Point2>,
    pub cells: Vec<[usize; 4]>,
    pub interior_edges: Vec<EdgeInfo>,
    pub boundary_edges: Vec<EdgeInfo>,
    /// Parallel to `boundary_edges`: whether the edge lies on ∂_D Ω.
    pub dirichlet_marker: Vec<bool>,
    cell_edges: Vec<[usize; 4]>,
}

impl Mesh {
    /// Uniform `nx × ny` grid of the rectangle. Boundary edges lying on one of
    /// `dirichlet_sides` are marked Dirichlet.
    pub fn rectangle(domain: Rect, nx: usize, ny: usize, dirichlet_sides: &[Side]) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "cell counts must be positive, got {nx} × {ny}"
            )));
        }
        if !(domain.x1 > domain.x0 && domain.y1 > domain.y0) {
            return Err(Error::InvalidArgument(format!(
                "degenerate domain {domain:?}"
            )));
        }
        let dx = (domain.x1 - domain.x0) / nx as f64;
        let dy = (domain.y1 - domain.y0) / ny as f64;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                // Pin the last row/column to the exact domain bounds.
                let x = if i == nx { domain.x1 } else { domain.x0 + i as f64 * dx };
                let y = if j == ny { domain.y1 } else { domain.y0 + j as f64 * dy };
                vertices.push([x, y]);
            }
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cells.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
            }
        }
        let tol = 1e-12 * (domain.x1 - domain.x0).max(domain.y1 - domain.y0);
        let on_side = |p: Point2, side: Side| match side {
            Side::Left => (p[0] - domain.x0).abs() <= tol,
            Side::Right => (p[0] - domain.x1).abs() <= tol,
            Side::Bottom => (p[1] - domain.y0).abs() <= tol,
            Side::Top => (p[1] - domain.y1).abs() <= tol,
        };
        let sides = dirichlet_sides.to_vec();
        Mesh::from_cells(vertices, cells, move |a, b| {
            sides.iter().any(|&s| on_side(a, s) && on_side(b, s))
        })
    }

    /// Build a mesh from raw vertices and counter-clockwise cells.
    /// `is_dirichlet(a, b)` decides, from the endpoint coordinates, whether a
    /// boundary edge belongs to ∂_D Ω.
    pub fn from_cells(
        vertices: Vec<Point2>,
        cells: Vec<[usize; 4]>,
        is_dirichlet: impl Fn(Point2, Point2) -> bool,
    ) -> Result<Mesh> {
        for (c, cell) in cells.iter().enumerate() {
            if cell.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "cell {c} references a missing vertex"
                )));
            }
            let map = GeometryMap::new(c, cell.map(|v| vertices[v]));
            // det DF is affine on the reference square, so the corners suffice.
            if REF_CORNERS.iter().any(|&x| map.jacobian_det(x) <= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cell {c} is not convex and counter-clockwise"
                )));
            }
        }

        let mut owners: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (c, cell) in cells.iter().enumerate() {
            for l in 0..4 {
                let (a, b) = (cell[l], cell[(l + 1) % 4]);
                owners.entry((a.min(b), a.max(b))).or_default().push((c, l));
            }
        }
        let mut keys: Vec<_> = owners.keys().copied().collect();
        keys.sort_unstable_by_key(|&(a, b)| {
            let (c, l) = owners[&(a, b)].iter().min().copied().unwrap();
            (c, l)
        });

        let mut interior_edges = Vec::new();
        let mut boundary_edges = Vec::new();
        let mut dirichlet_marker = Vec::new();
        let mut cell_edges = vec![[usize::MAX; 4]; cells.len()];
        // Boundary edges are numbered after all interior ones in `cell_edges`;
        // fix the offsets once the interior count is known.
        let mut boundary_slots = Vec::new();
        for key in keys {
            let mut sides = owners[&key].clone();
            sides.sort_unstable();
            let (cm, lm) = sides[0];
            let cell = cells[cm];
            let (a, b) = (cell[lm], cell[(lm + 1) % 4]);
            let (pa, pb) = (vertices[a], vertices[b]);
            let (dx, dy) = (pb[0] - pa[0], pb[1] - pa[1]);
            let length = dx.hypot(dy);
            let unit_normal = [dy / length, -dx / length];
            match sides.len() {
                1 => {
                    let dirichlet = is_dirichlet(pa, pb);
                    boundary_slots.push((cm, lm, boundary_edges.len()));
                    dirichlet_marker.push(dirichlet);
                    boundary_edges.push(EdgeInfo {
                        endpoints: [a, b],
                        cell_minus: cm,
                        local_minus: lm,
                        cell_plus: None,
                        local_plus: None,
                        unit_normal,
                        length,
                        dirichlet,
                    });
                }
                2 => {
                    let (cp, lp) = sides[1];
                    cell_edges[cm][lm] = interior_edges.len();
                    cell_edges[cp][lp] = interior_edges.len();
                    interior_edges.push(EdgeInfo {
                        endpoints: [a, b],
                        cell_minus: cm,
                        local_minus: lm,
                        cell_plus: Some(cp),
                        local_plus: Some(lp),
                        unit_normal,
                        length,
                        dirichlet: false,
                    });
                }
                n => {
                    return Err(Error::InvalidArgument(format!(
                        "edge {key:?} is shared by {n} cells"
                    )))
                }
            }
        }
        let n_int = interior_edges.len();
        for (c, l, k) in boundary_slots {
            cell_edges[c][l] = n_int + k;
        }

        Ok(Mesh {
            vertices,
            cells,
            interior_edges,
            boundary_edges,
            dirichlet_marker,
            cell_edges,
        })
    }

    /// Copy of the mesh with every vertex moved by `f(index, position)`.
    /// Topology and Dirichlet marking are kept; geometry is re-validated.
    pub fn with_moved_vertices(&self, f: impl Fn(usize, Point2) -> Point2) -> Result<Mesh> {
        let vertices: Vec<Point2> = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, &p)| f(i, p))
            .collect();
        let marked: std::collections::HashSet<(usize, usize)> = self
            .boundary_edges
            .iter()
            .zip(&self.dirichlet_marker)
            .filter(|(_, &d)| d)
            .map(|(e, _)| (e.endpoints[0].min(e.endpoints[1]), e.endpoints[0].max(e.endpoints[1])))
            .collect();
        let lookup: HashMap<[u64; 2], usize> = vertices
            .iter()
            .enumerate()
            .map(|(i, p)| ([p[0].to_bits(), p[1].to_bits()], i))
            .collect();
        Mesh::from_cells(vertices.clone(), self.cells.clone(), |a, b| {
            let ia = lookup[&[a[0].to_bits(), a[1].to_bits()]];
            let ib = lookup[&[b[0].to_bits(), b[1].to_bits()]];
            marked.contains(&(ia.min(ib), ia.max(ib)))
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn geometry(&self, cell: usize) -> GeometryMap {
        GeometryMap::new(cell, self.cells[cell].map(|v| self.vertices[v]))
    }

    /// h_T: the longer cell diagonal.
    pub fn cell_diameter(&self, cell: usize) -> f64 {
        let p = self.cells[cell].map(|v| self.vertices[v]);
        let d = |a: Point2, b: Point2| (a[0] - b[0]).hypot(a[1] - b[1]);
        d(p[0], p[2]).max(d(p[1], p[3]))
    }

    /// Largest cell diameter.
    pub fn h_max(&self) -> f64 {
        (0..self.n_cells())
            .map(|c| self.cell_diameter(c))
            .fold(0.0, f64::max)
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let p = self.cells[cell].map(|v| self.vertices[v]);
        0.5 * (0..4)
            .map(|i| {
                let (a, b) = (p[i], p[(i + 1) % 4]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
    }

    /// Indices of the four edges of `cell`: interior edges are numbered
    /// `0..interior_edges.len()`, boundary edges follow.
    pub fn cell_edges(&self, cell: usize) -> [usize; 4] {
        self.cell_edges[cell]
    }

    /// Edges of Γ_h: every interior edge and every Dirichlet boundary edge.
    pub fn skeleton(&self) -> impl Iterator<Item = &EdgeInfo> + '_ {
        self.interior_edges
            .iter()
            .chain(self.boundary_edges.iter().filter(|e| e.dirichlet))
    }

    pub fn dirichlet_edges(&self) -> impl Iterator<Item = &EdgeInfo> + '_ {
        self.skeleton().filter(|e| !e.is_interior())
    }

    /// Gauss points of `edge` as seen from the requested side. Physical points
    /// coincide between the two sides; weights sum to the edge length.
    pub fn edge_trace_points(
        &self,
        edge: &EdgeInfo,
        side: TraceSide,
        n_points: usize,
    ) -> Result<Vec<TracePoint>> {
        let (cell, local) = match side {
            TraceSide::Minus => (edge.cell_minus, edge.local_minus),
            TraceSide::Plus => match (edge.cell_plus, edge.local_plus) {
                (Some(c), Some(l)) => (c, l),
                _ => {
                    return Err(Error::InvalidArgument(
                        "plus trace requested on a boundary edge".into(),
                    ))
                }
            },
        };
        let (nodes, weights) = gauss_legendre(n_points)?;
        let map = self.geometry(cell);
        let forward = self.cells[cell][local] == edge.endpoints[0];
        let (c0, c1) = (REF_CORNERS[local], REF_CORNERS[(local + 1) % 4]);
        Ok(nodes
            .iter()
            .zip(&weights)
            .map(|(&t, &w)| {
                let s = if forward { t } else { 1.0 - t };
                let reference = [c0[0] + s * (c1[0] - c0[0]), c0[1] + s * (c1[1] - c0[1])];
                TracePoint {
                    reference,
                    physical: map.map(reference),
                    weight: w * edge.length,
                }
            })
            .collect())
    }
}

/// Derivatives of the inverse map ξ = F⁻¹ with respect to physical
/// coordinates, evaluated at the image of a reference point.
/// Indexing: `d1[a][i] = ∂_i ξ_a`, `d2[a][i][j]`, `d3[a][i][j][l]`.
#[derive(Clone, Copy, Debug, Default)]
pub struct InverseJet {
    pub d1: [[f64; 2]; 2],
    pub d2: [[[f64; 2]; 2]; 2],
    pub d3: [[[[f64; 2]; 2]; 2]; 2],
}

/// Bilinear map from the reference square onto one cell.
#[derive(Clone, Copy, Debug)]
pub struct GeometryMap {
    pub cell: usize,
    pub corners: [Point2; 4],
}

impl GeometryMap {
    pub fn new(cell: usize, corners: [Point2; 4]) -> Self {
        GeometryMap { cell, corners }
    }

    pub fn map(&self, x: Point2) -> Point2 {
        let n = [
            (1.0 - x[0]) * (1.0 - x[1]),
            x[0] * (1.0 - x[1]),
            x[0] * x[1],
            (1.0 - x[0]) * x[1],
        ];
        let mut p = [0.0; 2];
        for (a, corner) in self.corners.iter().enumerate() {
            p[0] += n[a] * corner[0];
            p[1] += n[a] * corner[1];
        }
        p
    }

    /// `DF[i][a] = ∂F_i / ∂x̂_a`.
    pub fn jacobian(&self, x: Point2) -> [[f64; 2]; 2] {
        let [p0, p1, p2, p3] = self.corners;
        let mut j = [[0.0; 2]; 2];
        for i in 0..2 {
            j[i][0] = (p1[i] - p0[i]) * (1.0 - x[1]) + (p2[i] - p3[i]) * x[1];
            j[i][1] = (p3[i] - p0[i]) * (1.0 - x[0]) + (p2[i] - p1[i]) * x[0];
        }
        j
    }

    pub fn jacobian_det(&self, x: Point2) -> f64 {
        let j = self.jacobian(x);
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    /// The only nonzero second derivative of a bilinear map, `∂²F/∂x̂∂ŷ`.
    pub fn mixed_second(&self) -> Point2 {
        let [p0, p1, p2, p3] = self.corners;
        [p0[0] - p1[0] + p2[0] - p3[0], p0[1] - p1[1] + p2[1] - p3[1]]
    }

    /// Whether the cell is a parallelogram (F affine, D²F = 0).
    pub fn is_affine(&self) -> bool {
        let d = self.mixed_second();
        let scale = self
            .corners
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1.0);
        d[0].abs().max(d[1].abs()) <= 1e-14 * scale
    }

    /// DF⁻¹, D²F⁻¹ and D³F⁻¹ at `F(x)`, by implicit differentiation of
    /// `F(ξ(x)) = x` using D³F = 0.
    pub fn inverse_jet(&self, x: Point2) -> InverseJet {
        let j = self.jacobian(x);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let jinv = [
            [j[1][1] / det, -j[0][1] / det],
            [-j[1][0] / det, j[0][0] / det],
        ];
        let d = self.mixed_second();
        let mut jet = InverseJet {
            d1: jinv,
            ..Default::default()
        };
        // D²F(u, w)_k = d_k (u_0 w_1 + u_1 w_0).
        let d2f = |u: [f64; 2], w: [f64; 2]| {
            let s = u[0] * w[1] + u[1] * w[0];
            [d[0] * s, d[1] * s]
        };
        let apply_neg_inv = |v: [f64; 2]| {
            [
                -(jinv[0][0] * v[0] + jinv[0][1] * v[1]),
                -(jinv[1][0] * v[0] + jinv[1][1] * v[1]),
            ]
        };
        let col = |m: &[[f64; 2]; 2], i: usize| [m[0][i], m[1][i]];
        for i in 0..2 {
            for jj in 0..2 {
                let r = apply_neg_inv(d2f(col(&jinv, i), col(&jinv, jj)));
                jet.d2[0][i][jj] = r[0];
                jet.d2[1][i][jj] = r[1];
            }
        }
        let d2col = |i: usize, j: usize| [jet.d2[0][i][j], jet.d2[1][i][j]];
        for i in 0..2 {
            for jj in 0..2 {
                for l in 0..2 {
                    let a = d2f(col(&jinv, l), d2col(i, jj));
                    let b = d2f(d2col(i, l), col(&jinv, jj));
                    let c = d2f(col(&jinv, i), d2col(jj, l));
                    let r = apply_neg_inv([a[0] + b[0] + c[0], a[1] + b[1] + c[1]]);
                    jet.d3[0][i][jj][l] = r[0];
                    jet.d3[1][i][jj][l] = r[1];
                }
            }
        }
        jet
    }

    /// Newton inversion of the bilinear map.
    pub fn inverse(&self, p: Point2) -> Result<Point2> {
        let mut x = [0.5, 0.5];
        for _ in 0..50 {
            let f = self.map(x);
            let r = [f[0] - p[0], f[1] - p[1]];
            let j = self.jacobian(x);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let dx = [
                (j[1][1] * r[0] - j[0][1] * r[1]) / det,
                (-j[1][0] * r[0] + j[0][0] * r[1]) / det,
            ];
            x = [x[0] - dx[0], x[1] - dx[1]];
            if dx[0].abs().max(dx[1].abs()) < 1e-15 {
                return Ok(x);
            }
        }
        Err(Error::InvalidArgument(format!(
            "point {p:?} could not be pulled back to cell {}",
            self.cell
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn vertical_load_mesh_has_table_size() {
        let m = Mesh::rectangle(Rect::new(0.0, 4.0, 0.0, 4.0), 16, 16, &[Side::Left, Side::Bottom])
            .unwrap();
        assert_eq!(m.n_cells(), 256);
        assert_relative_eq!(m.cell_diameter(0), 2f64.sqrt() * 0.25, epsilon = 1e-15);
        assert_eq!(m.interior_edges.len(), 16 * 15 * 2);
        assert_eq!(m.dirichlet_marker.iter().filter(|&&d| d).count(), 32);
    }

    #[test]
    fn smallest_meshes() {
        let m = Mesh::rectangle(Rect::unit(), 1, 1, &[]).unwrap();
        assert_eq!((m.n_cells(), m.interior_edges.len(), m.boundary_edges.len()), (1, 0, 4));
        let m = Mesh::rectangle(Rect::unit(), 2, 2, &[]).unwrap();
        assert_eq!((m.n_cells(), m.interior_edges.len()), (4, 4));
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(matches!(
            Mesh::rectangle(Rect::unit(), 0, 3, &[]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Mesh::rectangle(Rect::new(0.0, 0.0, 0.0, 1.0), 1, 1, &[]).is_err());
    }

    #[test]
    fn edge_counts_and_normals() {
        for (nx, ny) in [(1, 1), (3, 2), (5, 7)] {
            let m = Mesh::rectangle(Rect::new(-1.0, 2.0, 0.0, 1.5), nx, ny, &[Side::Top]).unwrap();
            assert_eq!(m.interior_edges.len(), nx * (ny - 1) + ny * (nx - 1));
            assert_eq!(m.boundary_edges.len(), 2 * (nx + ny));
            let mut seen = vec![0usize; m.interior_edges.len() + m.boundary_edges.len()];
            for c in 0..m.n_cells() {
                for e in m.cell_edges(c) {
                    seen[e] += 1;
                }
            }
            assert!(seen[..m.interior_edges.len()].iter().all(|&n| n == 2));
            assert!(seen[m.interior_edges.len()..].iter().all(|&n| n == 1));
            for e in m.interior_edges.iter().chain(&m.boundary_edges) {
                let n = e.unit_normal;
                assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-14);
                // Normal points away from the minus cell's centroid.
                let cm = centroid(&m, e.cell_minus);
                let mid = midpoint(&m, e);
                assert!((mid[0] - cm[0]) * n[0] + (mid[1] - cm[1]) * n[1] > 0.0);
                if let Some(cp) = e.cell_plus {
                    assert!(e.cell_minus < cp);
                    let c = centroid(&m, cp);
                    assert!((mid[0] - c[0]) * n[0] + (mid[1] - c[1]) * n[1] < 0.0);
                }
            }
            let on_top = m
                .boundary_edges
                .iter()
                .zip(&m.dirichlet_marker)
                .all(|(e, &d)| d == (m.vertices[e.endpoints[0]][1] == 1.5 && m.vertices[e.endpoints[1]][1] == 1.5));
            assert!(on_top);
        }
    }

    fn centroid(m: &Mesh, c: usize) -> Point2 {
        let p = m.cells[c].map(|v| m.vertices[v]);
        [p.iter().map(|q| q[0]).sum::<f64>() / 4.0, p.iter().map(|q| q[1]).sum::<f64>() / 4.0]
    }

    fn midpoint(m: &Mesh, e: &EdgeInfo) -> Point2 {
        let (a, b) = (m.vertices[e.endpoints[0]], m.vertices[e.endpoints[1]]);
        [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
    }

    #[test]
    fn areas_sum_to_domain() {
        let d = Rect::new(-2.0, 2.0, 0.0, 1.0);
        let m = Mesh::rectangle(d, 7, 3, &[]).unwrap();
        let total: f64 = (0..m.n_cells()).map(|c| m.cell_area(c)).sum();
        assert_relative_eq!(total, d.area(), max_relative = 1e-12);
    }

    #[test]
    fn midpoint_trace() {
        let m = Mesh::rectangle(Rect::unit(), 1, 1, &[]).unwrap();
        let bottom = m.boundary_edges.iter().find(|e| e.unit_normal[1] < -0.5).unwrap();
        let pts = m.edge_trace_points(bottom, TraceSide::Minus, 1).unwrap();
        assert_eq!(pts.len(), 1);
        assert_relative_eq!(pts[0].physical[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(pts[0].physical[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(pts[0].weight, 1.0, epsilon = 1e-15);
        assert!(matches!(
            m.edge_trace_points(bottom, TraceSide::Plus, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn interior_trace_weights_sum_to_length() {
        let m = Mesh::rectangle(Rect::new(0.0, 2.0, 0.0, 1.0), 2, 1, &[]).unwrap();
        let e = &m.interior_edges[0];
        let w: f64 = m
            .edge_trace_points(e, TraceSide::Plus, 3)
            .unwrap()
            .iter()
            .map(|p| p.weight)
            .sum();
        assert_relative_eq!(w, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn rectangle_maps_are_affine() {
        let m = Mesh::rectangle(Rect::new(0.0, 3.0, 0.0, 1.0), 3, 2, &[]).unwrap();
        for c in 0..m.n_cells() {
            let g = m.geometry(c);
            assert!(g.is_affine());
            let jet = g.inverse_jet([0.3, 0.8]);
            assert!(jet.d2.iter().flatten().flatten().all(|v| *v == 0.0));
            for (k, r) in REF_CORNERS.iter().enumerate() {
                assert_eq!(g.map(*r), m.vertices[m.cells[c][k]]);
            }
        }
    }

    #[test]
    fn flipped_boundary_edge_rejected() {
        let m = Mesh::rectangle(Rect::unit(), 1, 1, &[]).unwrap();
        assert!(m.boundary_edges[0].flipped().is_err());
    }

    #[test]
    fn non_convex_cell_rejected() {
        let v = vec![[0.0, 0.0], [1.0, 0.0], [0.2, 0.2], [0.0, 1.0]];
        assert!(Mesh::from_cells(v, vec![[0, 1, 2, 3]], |_, _| false).is_err());
    }

    #[test]
    fn inverse_roundtrip() {
        let g = GeometryMap::new(0, [[0.0, 0.0], [1.2, 0.1], [1.0, 0.9], [-0.1, 1.1]]);
        let x = [0.3, 0.7];
        let back = g.inverse(g.map(x)).unwrap();
        assert_relative_eq!(back[0], x[0], epsilon = 1e-13);
        assert_relative_eq!(back[1], x[1], epsilon = 1e-13);
    }
}
