//! Lifting operators and the reconstructed discrete Hessian.
//!
//! On each cell the local Hessian space `{D²w : w ∈ V_h^k(T)}` is given an
//! L²-orthonormal basis, so liftings are plain edge integrals against that
//! basis and all norms are Euclidean norms of coefficient blocks.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::assembly::AssembledForms;
use crate::dgspace::{DgSpace, EdgeJumpPoint, EdgeTable, Field, TraceTable};
use crate::{Mat2, Result};

/// Relative eigenvalue cutoff for the local Hessian Gram matrix.
const RANK_TOL: f64 = 1e-10;

/// Orthonormal bases of the local Hessian spaces, one per cell.
#[derive(Clone, Debug)]
pub struct HessianBasis {
    /// `τ_m = Σ_a coeffs[(a, m)] D²φ_a` on each cell.
    coeffs: Vec<DMatrix<f64>>,
    /// Gram matrices `∫_T D²φ_a : D²φ_b`.
    gram: Vec<DMatrix<f64>>,
}

impl HessianBasis {
    pub fn new(space: &DgSpace) -> HessianBasis {
        let nl = space.n_local();
        let (coeffs, gram) = (0..space.n_cells())
            .into_par_iter()
            .map(|cell| {
                let t = space.volume_table(cell);
                let mut g = DMatrix::zeros(nl, nl);
                for (d, w) in t.derivs.iter().zip(&t.jxw) {
                    for a in 0..nl {
                        for b in a..nl {
                            let v = w * frob(&d.hessians[a], &d.hessians[b]);
                            g[(a, b)] += v;
                            if a != b {
                                g[(b, a)] += v;
                            }
                        }
                    }
                }
                let eig = SymmetricEigen::new(g.clone());
                let max = eig.eigenvalues.iter().fold(0.0f64, |m: f64, v: &f64| m.max(*v));
                let keep: Vec<usize> = (0..nl).filter(|k| eig.eigenvalues[*k] > RANK_TOL * max).collect();
                let c = DMatrix::from_fn(nl, keep.len(), |a, m| {
                    let k = keep[m];
                    let lam: f64 = eig.eigenvalues[k];
                    eig.eigenvectors[(a, k)] / lam.sqrt()
                });
                (c, g)
            })
            .unzip();
        HessianBasis { coeffs, gram }
    }

    /// Dimension of the local Hessian space on `cell`.
    pub fn dim(&self, cell: usize) -> usize {
        self.coeffs[cell].ncols()
    }

    /// Gram matrix of the orthonormal basis; the identity up to roundoff.
    pub fn orthonormality_defect(&self, cell: usize) -> f64 {
        let c = &self.coeffs[cell];
        let g = c.transpose() * &self.gram[cell] * c;
        (g - DMatrix::identity(c.ncols(), c.ncols())).amax()
    }

    /// Values of `τ_m` at a point given the basis Hessians there.
    fn tau_values(&self, cell: usize, hessians: &[Mat2]) -> Vec<Mat2> {
        let c = &self.coeffs[cell];
        (0..c.ncols())
            .map(|m| {
                let mut t = [[0.0; 2]; 2];
                for (a, h) in hessians.iter().enumerate() {
                    for i in 0..2 {
                        for j in 0..2 {
                            t[i][j] += c[(a, m)] * h[i][j];
                        }
                    }
                }
                t
            })
            .collect()
    }

    /// `∂_μ tr τ_m` (the normal component of `div τ_m`) at a point.
    fn tau_div_normal(&self, cell: usize, thirds: &[[[[f64; 2]; 2]; 2]], mu: [f64; 2]) -> Vec<f64> {
        let c = &self.coeffs[cell];
        let lap: Vec<f64> = thirds
            .iter()
            .map(|t| (0..2).map(|l| (t[0][0][l] + t[1][1][l]) * mu[l]).sum())
            .collect();
        (0..c.ncols())
            .map(|m| (0..lap.len()).map(|a| c[(a, m)] * lap[a]).sum())
            .collect()
    }
}

fn frob(a: &Mat2, b: &Mat2) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Element of `[𝓗_h^k]³`: per-cell, per-component coefficients in the
/// orthonormal Hessian basis.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianField {
    pub coeffs: Vec<[Vec<f64>; 3]>,
}

impl HessianField {
    pub fn zeros(basis: &HessianBasis) -> HessianField {
        HessianField {
            coeffs: (0..basis.coeffs.len())
                .map(|c| std::array::from_fn(|_| vec![0.0; basis.dim(c)]))
                .collect(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().flatten().flatten().map(|v| v * v).sum()
    }

    /// L² inner product.
    pub fn dot(&self, other: &HessianField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .flat_map(|(a, b)| a.iter().zip(b))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    /// `self + s·other`.
    pub fn axpy(&mut self, s: f64, other: &HessianField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            for (ac, bc) in a.iter_mut().zip(b) {
                ac.iter_mut().zip(bc).for_each(|(x, y)| *x += s * y);
            }
        }
    }

    fn add_lifted(&mut self, lifted: &LiftedField, sign: f64) {
        for blk in &lifted.blocks {
            for c in 0..3 {
                for (x, y) in self.coeffs[blk.cell][c].iter_mut().zip(&blk.coeffs[c]) {
                    *x += sign * y;
                }
            }
        }
    }

    /// Values at the volume quadrature points of every cell.
    pub fn values(&self, space: &DgSpace, basis: &HessianBasis) -> Vec<Vec<[Mat2; 3]>> {
        (0..space.n_cells())
            .into_par_iter()
            .map(|cell| {
                space
                    .volume_table(cell)
                    .derivs
                    .iter()
                    .map(|d| {
                        let taus = basis.tau_values(cell, &d.hessians);
                        std::array::from_fn(|c| {
                            let mut out = [[0.0; 2]; 2];
                            for (t, a) in taus.iter().zip(&self.coeffs[cell][c]) {
                                for i in 0..2 {
                                    for j in 0..2 {
                                        out[i][j] += a * t[i][j];
                                    }
                                }
                            }
                            out
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

/// A lifting supported on the cells adjacent to one edge.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedField {
    pub blocks: Vec<LiftBlock>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiftBlock {
    pub cell: usize,
    pub coeffs: [Vec<f64>; 3],
}

impl LiftedField {
    pub fn norm_sq(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.coeffs.iter().flatten())
            .map(|v| v * v)
            .sum()
    }
}

fn trace_sides(e: &EdgeTable) -> (f64, Vec<&TraceTable>) {
    let weight = if e.plus.is_some() { 0.5 } else { 1.0 };
    (weight, e.sides().collect())
}

fn edge_jumps(space: &DgSpace, field: &Field, e: &EdgeTable) -> Vec<EdgeJumpPoint> {
    space.jumps_from_tables(&field.coeffs, &field.data, &e.edge, &e.minus, e.plus.as_ref())
}

/// `r_e([∇y])`: `∫_{ω(e)} r_e : τ = ∫_e [∇y]·{τ}μ` for every `τ`.
pub fn lift_gradient_jump(space: &DgSpace, basis: &HessianBasis, field: &Field, e: &EdgeTable) -> LiftedField {
    let jumps = edge_jumps(space, field, e);
    lift_with(basis, e, |side, q| {
        let mu = e.edge.unit_normal;
        let taus = basis.tau_values(side.cell, &side.derivs[q].hessians);
        let jp = &jumps[q];
        std::array::from_fn(|c| {
            taus.iter()
                .map(|t| {
                    let tm = [t[0][0] * mu[0] + t[0][1] * mu[1], t[1][0] * mu[0] + t[1][1] * mu[1]];
                    jp.weight * (jp.grad_jump[c][0] * tm[0] + jp.grad_jump[c][1] * tm[1])
                })
                .collect()
        })
    })
}

/// `b_e([y])`: `∫_{ω(e)} b_e : τ = ∫_e [y]{div τ}·μ` for every `τ`.
pub fn lift_value_jump(space: &DgSpace, basis: &HessianBasis, field: &Field, e: &EdgeTable) -> LiftedField {
    let jumps = edge_jumps(space, field, e);
    lift_with(basis, e, |side, q| {
        let divs = basis.tau_div_normal(side.cell, &side.derivs[q].thirds, e.edge.unit_normal);
        let jp = &jumps[q];
        std::array::from_fn(|c| divs.iter().map(|d| jp.weight * jp.value_jump[c] * d).collect())
    })
}

fn lift_with(
    basis: &HessianBasis,
    e: &EdgeTable,
    integrand: impl Fn(&TraceTable, usize) -> [Vec<f64>; 3],
) -> LiftedField {
    let (avg, sides) = trace_sides(e);
    let blocks = sides
        .into_iter()
        .map(|side| {
            let mut coeffs: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; basis.dim(side.cell)]);
            for q in 0..side.points.len() {
                let v = integrand(side, q);
                for c in 0..3 {
                    coeffs[c].iter_mut().zip(&v[c]).for_each(|(x, y)| *x += avg * y);
                }
            }
            LiftBlock { cell: side.cell, coeffs }
        })
        .collect();
    LiftedField { blocks }
}

/// Coefficients of the broken Hessian `D²_h y`, which lies in the local
/// Hessian space exactly.
pub fn broken_hessian(space: &DgSpace, basis: &HessianBasis, coeffs: &[f64]) -> HessianField {
    let nl = space.n_local();
    HessianField {
        coeffs: (0..space.n_cells())
            .map(|cell| {
                let gu = basis.coeffs[cell].transpose() * &basis.gram[cell];
                let u = space.cell_coeffs(coeffs, cell);
                std::array::from_fn(|c| {
                    let uc = nalgebra::DVector::from_column_slice(&u[c * nl..(c + 1) * nl]);
                    (&gu * uc).as_slice().to_vec()
                })
            })
            .collect(),
    }
}

/// Global liftings `(R_h([∇y]), B_h([y]))` summed over Γ_h.
pub fn global_liftings(space: &DgSpace, basis: &HessianBasis, field: &Field) -> (HessianField, HessianField) {
    let per_edge: Vec<(LiftedField, LiftedField)> = space
        .skeleton()
        .par_iter()
        .map(|e| {
            (
                lift_gradient_jump(space, basis, field, e),
                lift_value_jump(space, basis, field, e),
            )
        })
        .collect();
    let mut r = HessianField::zeros(basis);
    let mut b = HessianField::zeros(basis);
    for (re, be) in &per_edge {
        r.add_lifted(re, 1.0);
        b.add_lifted(be, 1.0);
    }
    (r, b)
}

/// `H_h[y] = D²_h y − R_h([∇y]) + B_h([y])`.
pub fn discrete_hessian(space: &DgSpace, basis: &HessianBasis, field: &Field) -> HessianField {
    let mut h = broken_hessian(space, basis, &field.coeffs);
    let (r, b) = global_liftings(space, basis, field);
    h.axpy(-1.0, &r);
    h.axpy(1.0, &b);
    h
}

/// Both sides of `½‖H_h‖² − (f, y) = E_h − J_h` with their ingredients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HessianGap {
    /// `½‖H_h[y]‖² − (f, y)`.
    pub lhs: f64,
    /// `J_h[y]`.
    pub jump_functional: f64,
    pub energy: f64,
    pub hessian_norm_sq: f64,
    /// `‖B_h([y]) − R_h([∇y])‖²`.
    pub lifting_norm_sq: f64,
    /// `‖h^{-3/2}[y]‖²` over Γ_h.
    pub value_jump_sq: f64,
    /// `‖h^{-1/2}[∇y]‖²` over Γ_h.
    pub grad_jump_sq: f64,
}

impl HessianGap {
    /// `|E_h − J_h − lhs|`.
    pub fn residual(&self) -> f64 {
        (self.energy - self.jump_functional - self.lhs).abs()
    }
}

/// Weighted jump norms `(‖h^{-3/2}[y]‖², ‖h^{-1/2}[∇y]‖²)` over Γ_h.
pub fn jump_norms(space: &DgSpace, field: &Field) -> (f64, f64) {
    space
        .skeleton()
        .par_iter()
        .map(|e| {
            let h = e.edge.length;
            edge_jumps(space, field, e).iter().fold((0.0, 0.0), |(v, g), p| {
                let vj: f64 = p.value_jump.iter().map(|x| x * x).sum();
                let gj: f64 = p.grad_jump.iter().flatten().map(|x| x * x).sum();
                (v + p.weight * vj / h.powi(3), g + p.weight * gj / h)
            })
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1))
}

/// Evaluates the energy identity for `field`, whose boundary data must be
/// the data `forms` was assembled with.
pub fn energy_hessian_gap(
    space: &DgSpace,
    basis: &HessianBasis,
    field: &Field,
    forms: &AssembledForms,
    gamma0: f64,
    gamma1: f64,
) -> Result<HessianGap> {
    let d2 = broken_hessian(space, basis, &field.coeffs);
    let (r, b) = global_liftings(space, basis, field);
    let mut lift = b.clone();
    lift.axpy(-1.0, &r);
    let mut h = d2;
    h.axpy(1.0, &lift);
    let f_dot_y = crate::assembly::dot(&field.coeffs, &forms.l_f);
    let (value_jump_sq, grad_jump_sq) = jump_norms(space, field);
    let lifting_norm_sq = lift.norm_sq();
    let hessian_norm_sq = h.norm_sq();
    Ok(HessianGap {
        lhs: 0.5 * hessian_norm_sq - f_dot_y,
        jump_functional: -0.5 * lifting_norm_sq + 0.5 * gamma0 * value_jump_sq + 0.5 * gamma1 * grad_jump_sq,
        energy: forms.energy(&field.coeffs),
        hessian_norm_sq,
        lifting_norm_sq,
        value_jump_sq,
        grad_jump_sq,
    })
}

/// Largest observed ratios `‖r_e‖/‖h^{-1/2}[∇y]‖_e` and
/// `‖b_e‖/‖h^{-3/2}[y]‖_e` over the skeleton; edges without jumps are skipped.
pub fn lifting_stability_constants(space: &DgSpace, basis: &HessianBasis, field: &Field) -> (f64, f64) {
    space
        .skeleton()
        .par_iter()
        .map(|e| {
            let h = e.edge.length;
            let jumps = edge_jumps(space, field, e);
            let gj: f64 = jumps.iter().map(|p| p.weight * p.grad_jump.iter().flatten().map(|x| x * x).sum::<f64>()).sum::<f64>() / h;
            let vj: f64 = jumps.iter().map(|p| p.weight * p.value_jump.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / h.powi(3);
            let r = lift_gradient_jump(space, basis, field, e).norm_sq();
            let b = lift_value_jump(space, basis, field, e).norm_sq();
            let ratio = |num: f64, den: f64| if den > 1e-300 { (num / den).sqrt() } else { 0.0 };
            (ratio(r, gj), ratio(b, vj))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)))
}
