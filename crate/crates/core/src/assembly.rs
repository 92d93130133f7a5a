//! Assembly of the interior-penalty bending form, the H²-type metric, the
//! mass matrix, load and data vectors, the linearized isometry constraint and
//! the isometry defect.
//!
//! Edge terms use `[v] = v⁻ − v⁺`, `{v} = ½(v⁻ + v⁺)` on interior edges and
//! one-sided traces on Dirichlet edges. Value jumps are weighted by `h_e⁻³`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dgspace::{BoundaryData, DgSpace, EdgeTable, Field, TraceTable};
use crate::linalg::CsrMatrix;
use crate::{Point2, Result, Vec3};

type Triplets = Vec<(usize, usize, f64)>;

/// Every operator and vector the flow needs for one choice of penalties.
#[derive(Clone, Debug)]
pub struct AssembledForms {
    /// `a_h` with homogeneous boundary jumps.
    pub a0: CsrMatrix,
    /// Discrete H² inner product.
    pub g: CsrMatrix,
    /// L² mass.
    pub m: CsrMatrix,
    /// Boundary-data part of `a_h(y, ·)`.
    pub l_bc: Vec<f64>,
    /// Data-data constant of `a_h(y, y)`.
    pub c_bc: f64,
    /// Load vector `(f, φ_i)`.
    pub l_f: Vec<f64>,
}

impl AssembledForms {
    /// `a_h(y, y)` for coefficients `y` carrying the assembled boundary data.
    pub fn bending(&self, y: &[f64]) -> f64 {
        self.a0.bilinear(y, y) - 2.0 * dot(y, &self.l_bc) + self.c_bc
    }

    /// `E_h[y] = ½ a_h(y, y) − (f, y)`.
    pub fn energy(&self, y: &[f64]) -> f64 {
        0.5 * self.bending(y) - dot(y, &self.l_f)
    }

    /// Coefficients of `−(a_h(y, ·) − (f, ·))`, the flow right-hand side.
    pub fn negative_gradient(&self, y: &[f64]) -> Vec<f64> {
        let ay = self.a0.matvec(y);
        ay.iter()
            .zip(&self.l_bc)
            .zip(&self.l_f)
            .map(|((a, b), f)| -(a - b) + f)
            .collect()
    }
}

/// Assembles forms on a fixed space with penalty parameters `γ0`, `γ1`.
#[derive(Clone, Debug)]
pub struct FormAssembler {
    space: Arc<DgSpace>,
    gamma0: f64,
    gamma1: f64,
}

/// Per-side scalar basis data at one edge quadrature point.
struct SideData<'a> {
    cell: usize,
    jump_sign: f64,
    avg_weight: f64,
    table: &'a TraceTable,
}

fn sides(e: &EdgeTable) -> Vec<SideData<'_>> {
    let avg_weight = if e.plus.is_some() { 0.5 } else { 1.0 };
    let mut out = vec![SideData {
        cell: e.minus.cell,
        jump_sign: 1.0,
        avg_weight,
        table: &e.minus,
    }];
    if let Some(p) = &e.plus {
        out.push(SideData {
            cell: p.cell,
            jump_sign: -1.0,
            avg_weight,
            table: p,
        });
    }
    out
}

fn mat_vec2(m: &[[f64; 2]; 2], v: Point2) -> Point2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn lap_normal(t: &[[[f64; 2]; 2]; 2], mu: Point2) -> f64 {
    (0..2).map(|l| (t[0][0][l] + t[1][1][l]) * mu[l]).sum()
}

fn dot2(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl FormAssembler {
    pub fn new(space: Arc<DgSpace>, gamma0: f64, gamma1: f64) -> Result<FormAssembler> {
        if !(gamma0 > 0.0 && gamma1 > 0.0) {
            return Err(crate::Error::InvalidArgument(format!(
                "penalties must be positive, got γ0 = {gamma0}, γ1 = {gamma1}"
            )));
        }
        Ok(FormAssembler { space, gamma0, gamma1 })
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    pub fn gammas(&self) -> (f64, f64) {
        (self.gamma0, self.gamma1)
    }

    /// `a_h(y, y)` evaluated pointwise from the broken Hessian and the edge
    /// jumps of `y` (against `y.data` on Dirichlet edges).
    ///
    /// Agrees with [`AssembledForms::bending`] in exact arithmetic but avoids
    /// the cancellation between the large penalty entries of `A0`, `l_bc` and
    /// `c_bc`, so it resolves small energy differences on fine meshes.
    pub fn bending_by_quadrature(&self, y: &Field) -> f64 {
        let sp = &self.space;
        let volume: Vec<f64> = (0..sp.n_cells())
            .into_par_iter()
            .map(|cell| {
                let t = sp.volume_table(cell);
                let u = sp.cell_coeffs(&y.coeffs, cell);
                t.derivs
                    .iter()
                    .zip(&t.jxw)
                    .map(|(d, w)| {
                        let hs = sp.eval_local(u, d).hess;
                        w * hs.iter().flatten().flatten().map(|v| v * v).sum::<f64>()
                    })
                    .sum::<f64>()
            })
            .collect();
        let edges: Vec<f64> = sp
            .skeleton()
            .par_iter()
            .map(|e| {
                let h = e.edge.length;
                sp.jumps_from_tables(&y.coeffs, &y.data, &e.edge, &e.minus, e.plus.as_ref())
                    .iter()
                    .map(|p| {
                        let mut v = 0.0;
                        for c in 0..3 {
                            let gj = p.grad_jump[c];
                            let cons = p.avg_dmu_grad[c][0] * gj[0] + p.avg_dmu_grad[c][1] * gj[1];
                            v += -2.0 * cons + 2.0 * p.avg_dmu_lap[c] * p.value_jump[c];
                            v += self.gamma1 / h * (gj[0] * gj[0] + gj[1] * gj[1]);
                            v += self.gamma0 / (h * h * h) * p.value_jump[c] * p.value_jump[c];
                        }
                        p.weight * v
                    })
                    .sum::<f64>()
            })
            .collect();
        volume.iter().sum::<f64>() + edges.iter().sum::<f64>()
    }

    /// Coefficients of `a_h(y, φ_i)` evaluated pointwise from the broken
    /// Hessian and edge jumps of `y`; equals `A0·y − l_bc` without the
    /// cancellation between large penalty entries.
    pub fn residual_by_quadrature(&self, y: &Field) -> Vec<f64> {
        let sp = &self.space;
        let nl = sp.n_local();
        let mut out: Vec<f64> = (0..sp.n_cells())
            .into_par_iter()
            .flat_map_iter(|cell| {
                let t = sp.volume_table(cell);
                let u = sp.cell_coeffs(&y.coeffs, cell);
                let mut r = vec![0.0; 3 * nl];
                for (d, w) in t.derivs.iter().zip(&t.jxw) {
                    let hy = sp.eval_local(u, d).hess;
                    for c in 0..3 {
                        for i in 0..nl {
                            let hi = &d.hessians[i];
                            let f = hy[c][0][0] * hi[0][0]
                                + hy[c][0][1] * hi[0][1]
                                + hy[c][1][0] * hi[1][0]
                                + hy[c][1][1] * hi[1][1];
                            r[c * nl + i] += w * f;
                        }
                    }
                }
                r.into_iter()
            })
            .collect();
        let edge_parts: Vec<(usize, Vec<f64>)> = sp
            .skeleton()
            .par_iter()
            .flat_map_iter(|e| {
                let h = e.edge.length;
                let mu = e.edge.unit_normal;
                let (p0, p1) = (self.gamma0 / h.powi(3), self.gamma1 / h);
                let jumps = sp.jumps_from_tables(&y.coeffs, &y.data, &e.edge, &e.minus, e.plus.as_ref());
                sides(e)
                    .into_iter()
                    .map(|s| {
                        let mut r = vec![0.0; 3 * nl];
                        for (q, jp) in jumps.iter().enumerate() {
                            let d = &s.table.derivs[q];
                            for c in 0..3 {
                                let (a, g) = (jp.avg_dmu_grad[c], jp.grad_jump[c]);
                                let (a3, v) = (jp.avg_dmu_lap[c], jp.value_jump[c]);
                                for i in 0..nl {
                                    let gi = d.grads[i];
                                    let vi = d.values[i];
                                    let hmu = mat_vec2(&d.hessians[i], mu);
                                    let lap = lap_normal(&d.thirds[i], mu);
                                    let f = s.jump_sign * (-dot2(a, gi) + a3 * vi + p1 * dot2(g, gi) + p0 * v * vi)
                                        + s.avg_weight * (-dot2(hmu, g) + lap * v);
                                    r[c * nl + i] += jp.weight * f;
                                }
                            }
                        }
                        (s.cell, r)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        for (cell, r) in edge_parts {
            let base = sp.dof(cell, 0, 0);
            out[base..base + 3 * nl].iter_mut().zip(&r).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Replicates a scalar local block over the three components.
    fn scatter(&self, out: &mut Triplets, row_cell: usize, col_cell: usize, block: &[f64]) {
        let nl = self.space.n_local();
        for c in 0..3 {
            let r0 = self.space.dof(row_cell, c, 0);
            let c0 = self.space.dof(col_cell, c, 0);
            for i in 0..nl {
                for j in 0..nl {
                    let v = block[i * nl + j];
                    if v != 0.0 {
                        out.push((r0 + i, c0 + j, v));
                    }
                }
            }
        }
    }

    fn volume_blocks(&self, cell: usize) -> (Vec<f64>, Vec<f64>) {
        let nl = self.space.n_local();
        let t = self.space.volume_table(cell);
        let mut hh = vec![0.0; nl * nl];
        let mut mm = vec![0.0; nl * nl];
        for (d, w) in t.derivs.iter().zip(&t.jxw) {
            for i in 0..nl {
                for j in 0..nl {
                    let (hi, hj) = (&d.hessians[i], &d.hessians[j]);
                    let hij = hi[0][0] * hj[0][0] + hi[0][1] * hj[0][1] + hi[1][0] * hj[1][0] + hi[1][1] * hj[1][1];
                    hh[i * nl + j] += w * hij;
                    mm[i * nl + j] += w * d.values[i] * d.values[j];
                }
            }
        }
        (hh, mm)
    }

    /// Scalar edge blocks `(row_cell, col_cell, a_h block, metric block)`.
    fn edge_blocks(&self, e: &EdgeTable) -> Vec<(usize, usize, Vec<f64>, Vec<f64>)> {
        let nl = self.space.n_local();
        let h = e.edge.length;
        let mu = e.edge.unit_normal;
        let (p0, p1) = (self.gamma0 / h.powi(3), self.gamma1 / h);
        let ss = sides(e);
        let mut out = Vec::with_capacity(ss.len() * ss.len());
        for s in &ss {
            for t in &ss {
                let mut ab = vec![0.0; nl * nl];
                let mut gb = vec![0.0; nl * nl];
                for q in 0..s.table.points.len() {
                    let w = s.table.points[q].weight;
                    let (ds, dt) = (&s.table.derivs[q], &t.table.derivs[q]);
                    let sign = s.jump_sign * t.jump_sign;
                    for i in 0..nl {
                        let gi = ds.grads[i];
                        let vi = ds.values[i];
                        let hmu_i = mat_vec2(&ds.hessians[i], mu);
                        let lap_i = lap_normal(&ds.thirds[i], mu);
                        for j in 0..nl {
                            let gj = dt.grads[j];
                            let vj = dt.values[j];
                            let hmu_j = mat_vec2(&dt.hessians[j], mu);
                            let lap_j = lap_normal(&dt.thirds[j], mu);
                            let consistency = -t.avg_weight * s.jump_sign * dot2(hmu_j, gi)
                                - s.avg_weight * t.jump_sign * dot2(hmu_i, gj)
                                + t.avg_weight * s.jump_sign * lap_j * vi
                                + s.avg_weight * t.jump_sign * lap_i * vj;
                            let gg = dot2(gi, gj);
                            let vv = vi * vj;
                            ab[i * nl + j] += w * (consistency + sign * (p1 * gg + p0 * vv));
                            gb[i * nl + j] += w * sign * (gg / h + vv / h.powi(3));
                        }
                    }
                }
                out.push((s.cell, t.cell, ab, gb));
            }
        }
        out
    }

    /// `(A0, G, M)` in one pass over cells and skeleton edges.
    pub fn assemble_matrices(&self) -> Result<(CsrMatrix, CsrMatrix, CsrMatrix)> {
        let n = self.space.n_dofs();
        let (mut ta, mut tg, tm): (Triplets, Triplets, Triplets) = (0..self.space.n_cells())
            .into_par_iter()
            .map(|cell| {
                let (hh, mm) = self.volume_blocks(cell);
                let (mut a, mut m) = (Vec::new(), Vec::new());
                self.scatter(&mut a, cell, cell, &hh);
                self.scatter(&mut m, cell, cell, &mm);
                (a.clone(), a, m)
            })
            .reduce(
                || (Vec::new(), Vec::new(), Vec::new()),
                |mut x, y| {
                    x.0.extend(y.0);
                    x.1.extend(y.1);
                    x.2.extend(y.2);
                    x
                },
            );
        let (ea, eg): (Triplets, Triplets) = self
            .space
            .skeleton()
            .par_iter()
            .map(|e| {
                let (mut a, mut g) = (Vec::new(), Vec::new());
                for (rc, cc, ab, gb) in self.edge_blocks(e) {
                    self.scatter(&mut a, rc, cc, &ab);
                    self.scatter(&mut g, rc, cc, &gb);
                }
                (a, g)
            })
            .reduce(
                || (Vec::new(), Vec::new()),
                |mut x, y| {
                    x.0.extend(y.0);
                    x.1.extend(y.1);
                    x
                },
            );
        ta.extend(ea);
        tg.extend(eg);
        Ok((
            CsrMatrix::from_triplets(n, n, ta)?,
            CsrMatrix::from_triplets(n, n, tg)?,
            CsrMatrix::from_triplets(n, n, tm)?,
        ))
    }

    /// `A0` together with the data vector `l_bc` and constant `c_bc`.
    pub fn assemble_ah(&self, data: &BoundaryData) -> Result<(CsrMatrix, Vec<f64>, f64)> {
        let (a0, _, _) = self.assemble_matrices()?;
        let (l_bc, c_bc) = self.assemble_data_terms(data);
        Ok((a0, l_bc, c_bc))
    }

    pub fn assemble_h2_metric(&self) -> Result<CsrMatrix> {
        Ok(self.assemble_matrices()?.1)
    }

    pub fn assemble_mass(&self) -> Result<CsrMatrix> {
        Ok(self.assemble_matrices()?.2)
    }

    /// `l_bc` and `c_bc` for boundary data `(g, Φ)`; zero when homogeneous.
    pub fn assemble_data_terms(&self, data: &BoundaryData) -> (Vec<f64>, f64) {
        let sp = &self.space;
        let mut l = vec![0.0; sp.n_dofs()];
        let mut c_bc = 0.0;
        if data.is_homogeneous() {
            return (l, c_bc);
        }
        let nl = sp.n_local();
        for e in sp.skeleton().iter().filter(|e| e.plus.is_none() && e.edge.dirichlet) {
            let h = e.edge.length;
            let mu = e.edge.unit_normal;
            let (p0, p1) = (self.gamma0 / h.powi(3), self.gamma1 / h);
            let t = &e.minus;
            for (tp, d) in t.points.iter().zip(&t.derivs) {
                let g = data.g(tp.physical);
                let phi = data.phi(tp.physical);
                let w = tp.weight;
                for comp in 0..3 {
                    let base = sp.dof(t.cell, comp, 0);
                    for i in 0..nl {
                        let hmu = mat_vec2(&d.hessians[i], mu);
                        let lap = lap_normal(&d.thirds[i], mu);
                        l[base + i] += w
                            * (-dot2(hmu, phi[comp])
                                + lap * g[comp]
                                + p1 * dot2(phi[comp], d.grads[i])
                                + p0 * g[comp] * d.values[i]);
                    }
                    c_bc += w * (p1 * dot2(phi[comp], phi[comp]) + p0 * g[comp] * g[comp]);
                }
            }
        }
        (l, c_bc)
    }

    /// `(f, φ_i)` for a body force density `f`.
    pub fn assemble_load(&self, f: impl Fn(Point2) -> Vec3 + Sync) -> Vec<f64> {
        let sp = &self.space;
        let nl = sp.n_local();
        let per_cell: Vec<Vec<f64>> = (0..sp.n_cells())
            .into_par_iter()
            .map(|cell| {
                let t = sp.volume_table(cell);
                let mut v = vec![0.0; sp.dofs_per_cell()];
                for ((x, w), d) in t.points.iter().zip(&t.jxw).zip(&t.derivs) {
                    let fx = f(*x);
                    for c in 0..3 {
                        for i in 0..nl {
                            v[c * nl + i] += w * fx[c] * d.values[i];
                        }
                    }
                }
                v
            })
            .collect();
        per_cell.concat()
    }

    pub fn assemble_all(
        &self,
        data: &BoundaryData,
        f: impl Fn(Point2) -> Vec3 + Sync,
    ) -> Result<AssembledForms> {
        let (a0, g, m) = self.assemble_matrices()?;
        let (l_bc, c_bc) = self.assemble_data_terms(data);
        Ok(AssembledForms {
            a0,
            g,
            m,
            l_bc,
            c_bc,
            l_f: self.assemble_load(f),
        })
    }
}

/// `E_h` of coefficients `y` whose data matches the one used for `forms`.
pub fn energy(y: &[f64], forms: &AssembledForms) -> f64 {
    forms.energy(y)
}

/// `D_h[y] = Σ_T |∫_T ∇yᵀ∇y − I|_F`.
pub fn isometry_defect(space: &DgSpace, y: &[f64]) -> f64 {
    space
        .cell_metric_integrals(y)
        .iter()
        .enumerate()
        .map(|(cell, m)| {
            let area: f64 = space.volume_table(cell).jxw.iter().sum();
            let d = [m[0][0] - area, m[0][1], m[1][0], m[1][1] - area];
            d.iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .sum()
}

/// Row pairs `(i, j)` of the three constraint rows per cell.
pub const CONSTRAINT_ROWS: [(usize, usize); 3] = [(0, 0), (0, 1), (1, 1)];

/// Linearized isometry constraint at `y`: row `3T + r` holds
/// `v ↦ ∫_T Σ_c ∂_i y_c ∂_j v_c + ∂_j y_c ∂_i v_c` for `(i, j) = CONSTRAINT_ROWS[r]`.
pub fn constraint_operator(space: &DgSpace, y: &[f64]) -> Result<CsrMatrix> {
    let nl = space.n_local();
    let triplets: Triplets = (0..space.n_cells())
        .into_par_iter()
        .flat_map_iter(|cell| {
            let t = space.volume_table(cell);
            let u = space.cell_coeffs(y, cell);
            let mut vals = vec![0.0; 3 * space.dofs_per_cell()];
            for (d, w) in t.derivs.iter().zip(&t.jxw) {
                let gy = space.eval_local(u, d).grad;
                for (r, (i, j)) in CONSTRAINT_ROWS.iter().enumerate() {
                    for c in 0..3 {
                        for k in 0..nl {
                            let g = d.grads[k];
                            vals[r * space.dofs_per_cell() + c * nl + k] +=
                                w * (gy[c][*i] * g[*j] + gy[c][*j] * g[*i]);
                        }
                    }
                }
            }
            let base = space.dof(cell, 0, 0);
            let ndc = space.dofs_per_cell();
            (0..3)
                .flat_map(|r| (0..ndc).map(move |k| (r, k)))
                .filter(|(r, k)| vals[r * ndc + k] != 0.0)
                .map(|(r, k)| (3 * cell + r, base + k, vals[r * ndc + k]))
                .collect::<Vec<_>>()
        })
        .collect();
    CsrMatrix::from_triplets(3 * space.n_cells(), space.n_dofs(), triplets)
}
