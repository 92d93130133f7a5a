//! Independent brute-force oracles shared by the integration tests.
//!
//! Everything here works in physical coordinates on axis-aligned rectangular
//! cells, with 1D Lagrange polynomials and a hard-coded 6-point Gauss rule,
//! so it shares neither the reference-element chain rule nor the quadrature
//! tables of the library.
#![allow(dead_code)]

use platedg::{DgSpace, Rect, Side};

/// 6-point Gauss-Legendre nodes and weights on (-1, 1).
const GAUSS6: [(f64, f64); 6] = [
    (-0.932_469_514_203_152_0, 0.171_324_492_379_170_3),
    (-0.661_209_386_466_264_5, 0.360_761_573_048_138_6),
    (-0.238_619_186_083_196_9, 0.467_913_934_572_691_0),
    (0.238_619_186_083_196_9, 0.467_913_934_572_691_0),
    (0.661_209_386_466_264_5, 0.360_761_573_048_138_6),
    (0.932_469_514_203_152_0, 0.171_324_492_379_170_3),
];

/// Gauss points and weights mapped to `(a, b)`.
pub fn gauss6(a: f64, b: f64) -> Vec<(f64, f64)> {
    let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
    GAUSS6.iter().map(|&(x, w)| (m + r * x, r * w)).collect()
}

/// Derivatives 0..=3 of the quadratic Lagrange polynomial on `nodes` that is
/// one at `nodes[a]`.
pub fn lagrange2(nodes: [f64; 3], a: usize, x: f64) -> [f64; 4] {
    let (p, q) = match a {
        0 => (nodes[1], nodes[2]),
        1 => (nodes[0], nodes[2]),
        _ => (nodes[0], nodes[1]),
    };
    let s = 1.0 / ((nodes[a] - p) * (nodes[a] - q));
    [s * (x - p) * (x - q), s * (2.0 * x - p - q), 2.0 * s, 0.0]
}

/// A tensor-product scalar basis function `X(x)·Y(y)` on one cell.
#[derive(Clone, Copy)]
struct Shape {
    xs: [f64; 3],
    ys: [f64; 3],
    a: usize,
    b: usize,
}

/// Value, gradient, Hessian and the full third-derivative tensor at a point.
struct Jet {
    v: f64,
    g: [f64; 2],
    h: [[f64; 2]; 2],
    t: [[[f64; 2]; 2]; 2],
}

impl Shape {
    fn jet(&self, p: [f64; 2]) -> Jet {
        let x = lagrange2(self.xs, self.a, p[0]);
        let y = lagrange2(self.ys, self.b, p[1]);
        let d = |i: usize, j: usize| x[i] * y[j];
        let mut t = [[[0.0; 2]; 2]; 2];
        for (u, tu) in t.iter_mut().enumerate() {
            for (v, tuv) in tu.iter_mut().enumerate() {
                for (w, tuvw) in tuv.iter_mut().enumerate() {
                    let ny = u + v + w;
                    *tuvw = d(3 - ny, ny);
                }
            }
        }
        Jet {
            v: d(0, 0),
            g: [d(1, 0), d(0, 1)],
            h: [[d(2, 0), d(1, 1)], [d(1, 1), d(0, 2)]],
            t,
        }
    }
}

impl Jet {
    fn hess_normal(&self, mu: [f64; 2]) -> [f64; 2] {
        [
            self.h[0][0] * mu[0] + self.h[0][1] * mu[1],
            self.h[1][0] * mu[0] + self.h[1][1] * mu[1],
        ]
    }

    fn lap_normal(&self, mu: [f64; 2]) -> f64 {
        (0..2).map(|l| (self.t[0][0][l] + self.t[1][1][l]) * mu[l]).sum()
    }
}

/// Dense `(A0, G, M)` of the `nx × ny` grid of `domain` with quadratic
/// elements, computed term by term from the definition of the interior
/// penalty form. Rows and columns use the library's dof numbering, which is
/// recovered by matching node coordinates.
pub struct DenseForms {
    pub a0: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
}

pub fn dense_forms(
    space: &DgSpace,
    domain: Rect,
    nx: usize,
    ny: usize,
    dirichlet: &[Side],
    gamma0: f64,
    gamma1: f64,
) -> DenseForms {
    let dx = (domain.x1 - domain.x0) / nx as f64;
    let dy = (domain.y1 - domain.y0) / ny as f64;
    let cell_box = |i: usize, j: usize| {
        let (x0, y0) = (domain.x0 + i as f64 * dx, domain.y0 + j as f64 * dy);
        ([x0, x0 + 0.5 * dx, x0 + dx], [y0, y0 + 0.5 * dy, y0 + dy])
    };

    // Library cell index and local numbering of each grid cell's shapes.
    let nl = space.n_local();
    let mut lib_cell = vec![vec![usize::MAX; ny]; nx];
    let mut shapes: Vec<Vec<(usize, Shape)>> = vec![Vec::new(); nx * ny];
    for c in 0..space.n_cells() {
        let nodes = space.node_points(c);
        let cx = nodes.iter().map(|p| p[0]).sum::<f64>() / nl as f64;
        let cy = nodes.iter().map(|p| p[1]).sum::<f64>() / nl as f64;
        let i = ((cx - domain.x0) / dx).floor() as usize;
        let j = ((cy - domain.y0) / dy).floor() as usize;
        lib_cell[i][j] = c;
        let (xs, ys) = cell_box(i, j);
        for (local, p) in nodes.iter().enumerate() {
            let a = xs.iter().position(|x| (x - p[0]).abs() < 1e-12).expect("node on grid");
            let b = ys.iter().position(|y| (y - p[1]).abs() < 1e-12).expect("node on grid");
            shapes[c].push((local, Shape { xs, ys, a, b }));
        }
    }

    let n = space.n_dofs();
    let mut out = DenseForms {
        a0: vec![vec![0.0; n]; n],
        g: vec![vec![0.0; n]; n],
        m: vec![vec![0.0; n]; n],
    };
    let add = |target: &mut Vec<Vec<f64>>, c1: usize, i: usize, c2: usize, j: usize, v: f64| {
        for comp in 0..3 {
            target[space.dof(c1, comp, i)][space.dof(c2, comp, j)] += v;
        }
    };

    // Volume terms.
    for i in 0..nx {
        for j in 0..ny {
            let c = lib_cell[i][j];
            let (xs, ys) = cell_box(i, j);
            for (p1, s1) in &shapes[c] {
                for (p2, s2) in &shapes[c] {
                    let (mut hh, mut mm) = (0.0, 0.0);
                    for &(x, wx) in &gauss6(xs[0], xs[2]) {
                        for &(y, wy) in &gauss6(ys[0], ys[2]) {
                            let (f, g) = (s1.jet([x, y]), s2.jet([x, y]));
                            let hij: f64 = (0..2).flat_map(|a| (0..2).map(move |b| (a, b))).map(|(a, b)| f.h[a][b] * g.h[a][b]).sum();
                            hh += wx * wy * hij;
                            mm += wx * wy * f.v * g.v;
                        }
                    }
                    add(&mut out.a0, c, *p1, c, *p2, hh);
                    add(&mut out.g, c, *p1, c, *p2, hh);
                    add(&mut out.m, c, *p1, c, *p2, mm);
                }
            }
        }
    }

    // Edges as (side cells with jump signs, normal, quadrature points, length).
    // Interior jumps are left − right and below − above, the normal points
    // from the first to the second cell; boundary normals point outward.
    struct Edge {
        cells: Vec<(usize, f64)>,
        mu: [f64; 2],
        points: Vec<([f64; 2], f64)>,
        length: f64,
    }
    let mut edges = Vec::new();
    for i in 0..=nx {
        let x = domain.x0 + i as f64 * dx;
        for j in 0..ny {
            let (_, ys) = cell_box(0, j);
            let points = gauss6(ys[0], ys[2]).into_iter().map(|(y, w)| ([x, y], w)).collect();
            let (cells, mu) = if i == 0 {
                if !dirichlet.contains(&Side::Left) {
                    continue;
                }
                (vec![(lib_cell[0][j], 1.0)], [-1.0, 0.0])
            } else if i == nx {
                if !dirichlet.contains(&Side::Right) {
                    continue;
                }
                (vec![(lib_cell[nx - 1][j], 1.0)], [1.0, 0.0])
            } else {
                (vec![(lib_cell[i - 1][j], 1.0), (lib_cell[i][j], -1.0)], [1.0, 0.0])
            };
            edges.push(Edge { cells, mu, points, length: dy });
        }
    }
    for j in 0..=ny {
        let y = domain.y0 + j as f64 * dy;
        for i in 0..nx {
            let (xs, _) = cell_box(i, 0);
            let points = gauss6(xs[0], xs[2]).into_iter().map(|(x, w)| ([x, y], w)).collect();
            let (cells, mu) = if j == 0 {
                if !dirichlet.contains(&Side::Bottom) {
                    continue;
                }
                (vec![(lib_cell[i][0], 1.0)], [0.0, -1.0])
            } else if j == ny {
                if !dirichlet.contains(&Side::Top) {
                    continue;
                }
                (vec![(lib_cell[i][ny - 1], 1.0)], [0.0, 1.0])
            } else {
                (vec![(lib_cell[i][j - 1], 1.0), (lib_cell[i][j], -1.0)], [0.0, 1.0])
            };
            edges.push(Edge { cells, mu, points, length: dx });
        }
    }

    for e in &edges {
        let avg = 1.0 / e.cells.len() as f64;
        let (h, mu) = (e.length, e.mu);
        for &(c1, s1) in &e.cells {
            for &(c2, s2) in &e.cells {
                for (i, f) in &shapes[c1] {
                    for (j, g) in &shapes[c2] {
                        // Terms of a_h(φ_j, φ_i) and of the metric, with
                        // [φ] = s·φ and {φ} = avg·φ for a shape on one side.
                        let (mut cons_grad, mut cons_val, mut pen_grad, mut pen_val) = (0.0, 0.0, 0.0, 0.0);
                        for &(p, w) in &e.points {
                            let (fi, gj) = (f.jet(p), g.jet(p));
                            let jump_grad_i = [s1 * fi.g[0], s1 * fi.g[1]];
                            let jump_grad_j = [s2 * gj.g[0], s2 * gj.g[1]];
                            let avg_hmu_i = fi.hess_normal(mu).map(|v| avg * v);
                            let avg_hmu_j = gj.hess_normal(mu).map(|v| avg * v);
                            cons_grad += w
                                * (avg_hmu_j[0] * jump_grad_i[0]
                                    + avg_hmu_j[1] * jump_grad_i[1]
                                    + avg_hmu_i[0] * jump_grad_j[0]
                                    + avg_hmu_i[1] * jump_grad_j[1]);
                            cons_val += w
                                * (avg * gj.lap_normal(mu) * s1 * fi.v
                                    + avg * fi.lap_normal(mu) * s2 * gj.v);
                            pen_grad += w * (jump_grad_i[0] * jump_grad_j[0] + jump_grad_i[1] * jump_grad_j[1]);
                            pen_val += w * s1 * fi.v * s2 * gj.v;
                        }
                        let a = -cons_grad + cons_val + gamma1 / h * pen_grad + gamma0 / h.powi(3) * pen_val;
                        let gm = pen_grad / h + pen_val / h.powi(3);
                        add(&mut out.a0, c1, *i, c2, *j, a);
                        add(&mut out.g, c1, *i, c2, *j, gm);
                    }
                }
            }
        }
    }
    out
}

/// Largest entrywise difference and largest entry of the oracle.
pub fn dense_gap(lib: &[Vec<f64>], oracle: &[Vec<f64>]) -> (f64, f64) {
    let mut gap: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (r, o) in lib.iter().zip(oracle) {
        for (x, y) in r.iter().zip(o) {
            gap = gap.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    (gap, scale)
}

/// Node abscissae `(xs, ys)` of a rectangular library cell.
pub fn cell_box(space: &DgSpace, cell: usize) -> ([f64; 3], [f64; 3]) {
    let nodes = space.node_points(cell);
    let lo = |k: usize| nodes.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
    let hi = |k: usize| nodes.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1, y0, y1) = (lo(0), hi(0), lo(1), hi(1));
    ([x0, 0.5 * (x0 + x1), x1], [y0, 0.5 * (y0 + y1), y1])
}

fn cell_shapes(space: &DgSpace, cell: usize) -> Vec<Shape> {
    let (xs, ys) = cell_box(space, cell);
    space
        .node_points(cell)
        .iter()
        .map(|p| Shape {
            xs,
            ys,
            a: xs.iter().position(|x| (x - p[0]).abs() < 1e-12).expect("node on grid"),
            b: ys.iter().position(|y| (y - p[1]).abs() < 1e-12).expect("node on grid"),
        })
        .collect()
}

/// `∇y_c` at physical point `p` of a rectangular cell.
pub fn field_gradient(space: &DgSpace, coeffs: &[f64], cell: usize, p: [f64; 2]) -> [[f64; 2]; 3] {
    let mut g = [[0.0; 2]; 3];
    for (local, s) in cell_shapes(space, cell).iter().enumerate() {
        let j = s.jet(p);
        for (c, gc) in g.iter_mut().enumerate() {
            let u = coeffs[space.dof(cell, c, local)];
            gc[0] += u * j.g[0];
            gc[1] += u * j.g[1];
        }
    }
    g
}

/// Integral of `f(p)` over a rectangular cell with the 6×6 rule.
pub fn integrate_cell(space: &DgSpace, cell: usize, mut f: impl FnMut([f64; 2]) -> f64) -> f64 {
    let (xs, ys) = cell_box(space, cell);
    let mut total = 0.0;
    for &(x, wx) in &gauss6(xs[0], xs[2]) {
        for &(y, wy) in &gauss6(ys[0], ys[2]) {
            total += wx * wy * f([x, y]);
        }
    }
    total
}
