//! The broken space [V_h^k]³, fields on it, and edge jumps/averages.
//!
//! Degrees of freedom are fully discontinuous. The global index of local
//! basis function `i` of component `c` on cell `T` is
//! `T·3(k+1)² + c·(k+1)² + i`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::mesh::{EdgeInfo, Mesh, TracePoint, TraceSide};
use crate::refelem::{eval_mapped_derivatives, MappedDerivs, QuadRule, RefBasis};
use crate::{Error, Mat32, Point2, Result, Vec3};

type GFn = dyn Fn(Point2) -> Vec3 + Send + Sync;
type PhiFn = dyn Fn(Point2) -> Mat32 + Send + Sync;

/// Dirichlet data `(g, Φ)` evaluated analytically on ∂_D Ω.
#[derive(Clone)]
pub struct BoundaryData {
    g: Option<Arc<GFn>>,
    phi: Option<Arc<PhiFn>>,
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryData")
            .field("homogeneous", &self.is_homogeneous())
            .finish()
    }
}

impl BoundaryData {
    /// `(0, 0)`: boundary jumps are raw traces.
    pub fn homogeneous() -> Self {
        BoundaryData { g: None, phi: None }
    }

    pub fn new(
        g: impl Fn(Point2) -> Vec3 + Send + Sync + 'static,
        phi: impl Fn(Point2) -> Mat32 + Send + Sync + 'static,
    ) -> Self {
        BoundaryData {
            g: Some(Arc::new(g)),
            phi: Some(Arc::new(phi)),
        }
    }

    /// Clamped flat plate: `g = (x1, x2, 0)`, `Φ = [I₂, 0]ᵀ`.
    pub fn clamped_flat() -> Self {
        BoundaryData::new(|x| [x[0], x[1], 0.0], |_| identity_phi())
    }

    pub fn is_homogeneous(&self) -> bool {
        self.g.is_none() && self.phi.is_none()
    }

    pub fn g(&self, x: Point2) -> Vec3 {
        self.g.as_ref().map_or([0.0; 3], |g| g(x))
    }

    pub fn phi(&self, x: Point2) -> Mat32 {
        self.phi.as_ref().map_or([[0.0; 2]; 3], |p| p(x))
    }
}

/// `[I₂, 0]ᵀ`.
pub fn identity_phi() -> Mat32 {
    [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]
}

/// Coefficients of a deformation together with the boundary data that
/// defines its jumps on ∂_D Ω.
#[derive(Clone, Debug)]
pub struct Field {
    pub coeffs: Vec<f64>,
    pub data: BoundaryData,
}

impl Field {
    pub fn zeros(space: &DgSpace) -> Field {
        Field {
            coeffs: vec![0.0; space.n_dofs()],
            data: BoundaryData::homogeneous(),
        }
    }

    pub fn with_data(mut self, data: BoundaryData) -> Field {
        self.data = data;
        self
    }
}

/// Basis derivatives at the volume quadrature points of one cell.
#[derive(Clone, Debug)]
pub struct VolumeTable {
    pub points: Vec<Point2>,
    pub jxw: Vec<f64>,
    pub derivs: Vec<MappedDerivs>,
}

/// Basis derivatives at the quadrature points of an edge, seen from one cell.
#[derive(Clone, Debug)]
pub struct TraceTable {
    pub cell: usize,
    pub points: Vec<TracePoint>,
    pub derivs: Vec<MappedDerivs>,
}

/// Trace tables of one skeleton edge.
#[derive(Clone, Debug)]
pub struct EdgeTable {
    pub edge: EdgeInfo,
    pub minus: TraceTable,
    pub plus: Option<TraceTable>,
}

impl EdgeTable {
    pub fn sides(&self) -> impl Iterator<Item = &TraceTable> + '_ {
        std::iter::once(&self.minus).chain(self.plus.as_ref())
    }
}

/// The discontinuous space [V_h^k]³ with precomputed evaluation tables.
#[derive(Clone, Debug)]
pub struct DgSpace {
    mesh: Arc<Mesh>,
    basis: RefBasis,
    quad: QuadRule,
    volume: Vec<VolumeTable>,
    skeleton: Vec<EdgeTable>,
}

impl DgSpace {
    /// Space of degree `degree` with `quad_points` Gauss points per direction
    /// on cells and edges.
    pub fn new(mesh: Arc<Mesh>, degree: usize, quad_points: usize) -> Result<DgSpace> {
        let basis = RefBasis::new(degree)?;
        let quad = QuadRule::gauss(quad_points)?;
        let volume = (0..mesh.n_cells())
            .into_par_iter()
            .map(|c| {
                let map = mesh.geometry(c);
                let mut t = VolumeTable {
                    points: Vec::with_capacity(quad.len()),
                    jxw: Vec::with_capacity(quad.len()),
                    derivs: Vec::with_capacity(quad.len()),
                };
                for (x, w) in quad.points.iter().zip(&quad.weights) {
                    t.points.push(map.map(*x));
                    t.jxw.push(w * map.jacobian_det(*x));
                    t.derivs.push(eval_mapped_derivatives(&basis, &map, *x, 3)?);
                }
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        let edges: Vec<EdgeInfo> = mesh.skeleton().cloned().collect();
        let skeleton = edges
            .into_par_iter()
            .map(|edge| {
                let minus = trace_table(&mesh, &basis, &edge, TraceSide::Minus, quad_points)?;
                let plus = if edge.is_interior() {
                    Some(trace_table(&mesh, &basis, &edge, TraceSide::Plus, quad_points)?)
                } else {
                    None
                };
                Ok(EdgeTable { edge, minus, plus })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DgSpace {
            mesh,
            basis,
            quad,
            volume,
            skeleton,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<Mesh> {
        self.mesh.clone()
    }

    pub fn basis(&self) -> &RefBasis {
        &self.basis
    }

    pub fn quad(&self) -> &QuadRule {
        &self.quad
    }

    pub fn quad_points(&self) -> usize {
        self.quad.n_per_dir
    }

    /// Scalar basis functions per cell, (k+1)².
    pub fn n_local(&self) -> usize {
        self.basis.dim()
    }

    pub fn dofs_per_cell(&self) -> usize {
        3 * self.n_local()
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    pub fn n_dofs(&self) -> usize {
        self.dofs_per_cell() * self.n_cells()
    }

    pub fn dof(&self, cell: usize, comp: usize, local: usize) -> usize {
        cell * self.dofs_per_cell() + comp * self.n_local() + local
    }

    /// Inverse of [`DgSpace::dof`].
    pub fn dof_location(&self, dof: usize) -> (usize, usize, usize) {
        let cell = dof / self.dofs_per_cell();
        let rem = dof % self.dofs_per_cell();
        (cell, rem / self.n_local(), rem % self.n_local())
    }

    pub fn volume_table(&self, cell: usize) -> &VolumeTable {
        &self.volume[cell]
    }

    /// Tables for Γ_h: interior edges first, then Dirichlet edges.
    pub fn skeleton(&self) -> &[EdgeTable] {
        &self.skeleton
    }

    /// Physical position of every Lagrange node of `cell`.
    pub fn node_points(&self, cell: usize) -> Vec<Point2> {
        let map = self.mesh.geometry(cell);
        (0..self.n_local())
            .map(|i| map.map(self.basis.node(i)))
            .collect()
    }

    /// Coefficients of `field` on `cell`, component-major.
    pub fn cell_coeffs<'a>(&self, field: &'a [f64], cell: usize) -> &'a [f64] {
        let n = self.dofs_per_cell();
        &field[cell * n..(cell + 1) * n]
    }

    /// Lagrange interpolant: coefficient at each node equals `f(node)`.
    pub fn interpolate(&self, f: impl Fn(Point2) -> Vec3, data: BoundaryData) -> Field {
        let mut coeffs = vec![0.0; self.n_dofs()];
        for cell in 0..self.n_cells() {
            for (i, p) in self.node_points(cell).into_iter().enumerate() {
                let v = f(p);
                for (c, vc) in v.iter().enumerate() {
                    coeffs[self.dof(cell, c, i)] = *vc;
                }
            }
        }
        Field { coeffs, data }
    }

    /// Nodal truncation of the third component at `ceiling`; the surrogate
    /// for the L² projection onto `{y₃ ≤ ceiling}`.
    pub fn l2_project_obstacle(&self, field: &Field, ceiling: f64) -> Field {
        let mut out = field.clone();
        for cell in 0..self.n_cells() {
            for i in 0..self.n_local() {
                let d = self.dof(cell, 2, i);
                out.coeffs[d] = out.coeffs[d].min(ceiling);
            }
        }
        out
    }

    /// Value, gradient and Hessian of `coeffs` on `cell` at a set of
    /// precomputed basis derivatives.
    pub fn eval_local(&self, coeffs: &[f64], derivs: &MappedDerivs) -> LocalValue {
        let nl = self.n_local();
        let mut out = LocalValue::default();
        for c in 0..3 {
            let u = &coeffs[c * nl..(c + 1) * nl];
            for i in 0..nl {
                out.value[c] += u[i] * derivs.values[i];
                if !derivs.grads.is_empty() {
                    for j in 0..2 {
                        out.grad[c][j] += u[i] * derivs.grads[i][j];
                    }
                }
                if !derivs.hessians.is_empty() {
                    for j in 0..2 {
                        for k in 0..2 {
                            out.hess[c][j][k] += u[i] * derivs.hessians[i][j][k];
                        }
                    }
                }
                if !derivs.thirds.is_empty() {
                    for j in 0..2 {
                        for k in 0..2 {
                            for l in 0..2 {
                                out.third[c][j][k][l] += u[i] * derivs.thirds[i][j][k][l];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Jumps and averages of `field` at `n_points` Gauss points of `edge`.
    ///
    /// Interior edges: `[v] = v⁻ − v⁺`, averages are arithmetic means.
    /// Dirichlet edges: `[v] = v − g`, `[∇v] = ∇v − Φ`, averages one-sided.
    /// Other boundary edges: raw one-sided traces.
    pub fn edge_jump_average(
        &self,
        field: &Field,
        edge: &EdgeInfo,
        n_points: usize,
    ) -> Result<Vec<EdgeJumpPoint>> {
        let minus = trace_table(&self.mesh, &self.basis, edge, TraceSide::Minus, n_points)?;
        let plus = if edge.is_interior() {
            Some(trace_table(&self.mesh, &self.basis, edge, TraceSide::Plus, n_points)?)
        } else {
            None
        };
        Ok(self.jumps_from_tables(&field.coeffs, &field.data, edge, &minus, plus.as_ref()))
    }

    pub(crate) fn jumps_from_tables(
        &self,
        coeffs: &[f64],
        data: &BoundaryData,
        edge: &EdgeInfo,
        minus: &TraceTable,
        plus: Option<&TraceTable>,
    ) -> Vec<EdgeJumpPoint> {
        let mu = edge.unit_normal;
        let cm = self.cell_coeffs(coeffs, minus.cell);
        (0..minus.points.len())
            .map(|q| {
                let vm = self.eval_local(cm, &minus.derivs[q]);
                let tp = minus.points[q];
                let mut out = EdgeJumpPoint {
                    physical: tp.physical,
                    weight: tp.weight,
                    ..Default::default()
                };
                match plus {
                    Some(pt) => {
                        let vp = self.eval_local(self.cell_coeffs(coeffs, pt.cell), &pt.derivs[q]);
                        for c in 0..3 {
                            out.value_jump[c] = vm.value[c] - vp.value[c];
                            out.avg_dmu_lap[c] = 0.5 * (vm.dmu_lap(c, mu) + vp.dmu_lap(c, mu));
                            let (gm, gp) = (vm.dmu_grad(c, mu), vp.dmu_grad(c, mu));
                            for j in 0..2 {
                                out.grad_jump[c][j] = vm.grad[c][j] - vp.grad[c][j];
                                out.avg_dmu_grad[c][j] = 0.5 * (gm[j] + gp[j]);
                            }
                        }
                    }
                    None => {
                        let (g, phi) = if edge.dirichlet {
                            (data.g(tp.physical), data.phi(tp.physical))
                        } else {
                            ([0.0; 3], [[0.0; 2]; 3])
                        };
                        for c in 0..3 {
                            out.value_jump[c] = vm.value[c] - g[c];
                            out.avg_dmu_lap[c] = vm.dmu_lap(c, mu);
                            out.avg_dmu_grad[c] = vm.dmu_grad(c, mu);
                            for j in 0..2 {
                                out.grad_jump[c][j] = vm.grad[c][j] - phi[c][j];
                            }
                        }
                    }
                }
                out
            })
            .collect()
    }

    /// `‖y − g‖_{L²(∂_D Ω)}` over the Dirichlet edges.
    pub fn dirichlet_residual(&self, field: &Field) -> f64 {
        self.skeleton
            .iter()
            .filter(|e| e.plus.is_none())
            .flat_map(|e| self.jumps_from_tables(&field.coeffs, &field.data, &e.edge, &e.minus, None))
            .map(|p| p.weight * p.value_jump.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Σ_T ‖y‖²_{L²(T)} per cell.
    pub fn cell_l2_norms_sq(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.n_cells())
            .map(|cell| {
                let t = &self.volume[cell];
                let u = self.cell_coeffs(coeffs, cell);
                t.derivs
                    .iter()
                    .zip(&t.jxw)
                    .map(|(d, w)| {
                        let v = self.eval_local(u, d).value;
                        w * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
                    })
                    .sum()
            })
            .collect()
    }

    /// ‖∇_h y‖²_{L²(Ω)}.
    pub fn broken_grad_norm_sq(&self, coeffs: &[f64]) -> f64 {
        (0..self.n_cells())
            .into_par_iter()
            .map(|cell| {
                let t = &self.volume[cell];
                let u = self.cell_coeffs(coeffs, cell);
                t.derivs
                    .iter()
                    .zip(&t.jxw)
                    .map(|(d, w)| {
                        let g = self.eval_local(u, d).grad;
                        w * g.iter().flatten().map(|x| x * x).sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// `∫_T (∇y)ᵀ∇y` for every cell, as a symmetric 2×2 matrix.
    pub fn cell_metric_integrals(&self, coeffs: &[f64]) -> Vec<[[f64; 2]; 2]> {
        (0..self.n_cells())
            .into_par_iter()
            .map(|cell| {
                let t = &self.volume[cell];
                let u = self.cell_coeffs(coeffs, cell);
                let mut m = [[0.0; 2]; 2];
                for (d, w) in t.derivs.iter().zip(&t.jxw) {
                    let g = self.eval_local(u, d).grad;
                    for i in 0..2 {
                        for j in 0..2 {
                            m[i][j] += w * (0..3).map(|c| g[c][i] * g[c][j]).sum::<f64>();
                        }
                    }
                }
                m
            })
            .collect()
    }

    /// Point value of `field` at physical point `x`, taken from the first cell
    /// containing it; `None` outside the mesh.
    pub fn evaluate_at(&self, field: &Field, x: Point2) -> Option<Vec3> {
        let basis_eval = |cell: usize, r: Point2| {
            let vals = self.basis.eval(r).values;
            let u = self.cell_coeffs(&field.coeffs, cell);
            let nl = self.n_local();
            std::array::from_fn(|c| (0..nl).map(|i| u[c * nl + i] * vals[i]).sum())
        };
        (0..self.n_cells()).find_map(|cell| {
            let map = self.mesh.geometry(cell);
            let (lo, hi) = map.corners.iter().fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), p| {
                ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
            });
            let eps = 1e-12 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
            if x[0] < lo[0] - eps || x[0] > hi[0] + eps || x[1] < lo[1] - eps || x[1] > hi[1] + eps {
                return None;
            }
            let r = map.inverse(x).ok()?;
            let inside = (-1e-10..=1.0 + 1e-10).contains(&r[0]) && (-1e-10..=1.0 + 1e-10).contains(&r[1]);
            inside.then(|| basis_eval(cell, r))
        })
    }

    /// Lagrange-node values of component `comp`, one vector per cell.
    pub fn nodal_values(&self, field: &Field, comp: usize) -> Result<Vec<f64>> {
        if comp > 2 {
            return Err(Error::InvalidArgument(format!("component {comp} out of range")));
        }
        Ok((0..self.n_cells())
            .flat_map(|cell| (0..self.n_local()).map(move |i| (cell, i)))
            .map(|(cell, i)| field.coeffs[self.dof(cell, comp, i)])
            .collect())
    }
}

fn trace_table(
    mesh: &Mesh,
    basis: &RefBasis,
    edge: &EdgeInfo,
    side: TraceSide,
    n_points: usize,
) -> Result<TraceTable> {
    let points = mesh.edge_trace_points(edge, side, n_points)?;
    let cell = match side {
        TraceSide::Minus => edge.cell_minus,
        TraceSide::Plus => edge.cell_plus.expect("checked by edge_trace_points"),
    };
    let map = mesh.geometry(cell);
    let derivs = points
        .iter()
        .map(|p| eval_mapped_derivatives(basis, &map, p.reference, 3))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceTable {
        cell,
        points,
        derivs,
    })
}

/// Value and derivatives of a vector field at one point of one cell.
#[derive(Clone, Copy, Debug, Default)]
pub struct LocalValue {
    pub value: Vec3,
    pub grad: Mat32,
    pub hess: [[[f64; 2]; 2]; 3],
    pub third: [[[[f64; 2]; 2]; 2]; 3],
}

impl LocalValue {
    /// `∂_μ ∇y_c = D²y_c μ`.
    pub fn dmu_grad(&self, c: usize, mu: Point2) -> Point2 {
        let h = self.hess[c];
        [h[0][0] * mu[0] + h[0][1] * mu[1], h[1][0] * mu[0] + h[1][1] * mu[1]]
    }

    /// `∂_μ Δy_c = Σ_{i,l} ∂_iil y_c μ_l`.
    pub fn dmu_lap(&self, c: usize, mu: Point2) -> f64 {
        let t = self.third[c];
        (0..2)
            .map(|l| (t[0][0][l] + t[1][1][l]) * mu[l])
            .sum()
    }
}

/// Jumps and averages at one edge quadrature point.
#[derive(Clone, Copy, Debug, Default)]
pub struct EdgeJumpPoint {
    pub physical: Point2,
    pub weight: f64,
    pub value_jump: Vec3,
    pub grad_jump: Mat32,
    pub avg_dmu_grad: Mat32,
    pub avg_dmu_lap: Vec3,
}
