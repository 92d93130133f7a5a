//! Sparse storage, a reusable direct factorization and the
//! Schur-complement conjugate gradient used by the flow.

use std::collections::VecDeque;

use log::warn;
use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use rayon::prelude::*;

use faer::col::Col;
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::linalg::LltError;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side as FaerSide;

use crate::{Error, Result};

/// Compressed sparse row matrix with sorted, duplicate-free columns.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> CsrMatrix {
        CsrMatrix {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> CsrMatrix {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<CsrMatrix> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= nrows || *c >= ncols) {
            return Err(Error::InvalidArgument(format!(
                "triplet ({r}, {c}) outside {nrows}×{ncols}"
            )));
        }
        triplets.par_sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("nonempty") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<CsrMatrix> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::InvalidArgument("ragged dense matrix".into()));
            }
            t.extend(row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (i, j, *v)));
        }
        CsrMatrix::from_triplets(rows.len(), ncols, t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "matvec dimension mismatch");
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(c, v)| v * x[*c]).sum();
        });
    }

    /// `Aᵀx`.
    pub fn transpose_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows, "transpose matvec dimension mismatch");
        let mut y = vec![0.0; self.ncols];
        for (i, xi) in x.iter().enumerate() {
            if *xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * xi;
            }
        }
        y
    }

    /// `xᵀAy`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.nrows)
            .into_par_iter()
            .map(|i| {
                let (cols, vals) = self.row(i);
                x[i] * cols.iter().zip(vals).map(|(c, v)| v * y[*c]).sum::<f64>()
            })
            .sum()
    }

    /// `self + scale·other`.
    pub fn add_scaled(&self, other: &CsrMatrix, scale: f64) -> Result<CsrMatrix> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::InvalidArgument("matrix sum dimension mismatch".into()));
        }
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(col_idx.capacity());
        for i in 0..self.nrows {
            let (ca, va) = self.row(i);
            let (cb, vb) = other.row(i);
            let (mut p, mut q) = (0, 0);
            while p < ca.len() || q < cb.len() {
                let (c, v) = match (ca.get(p), cb.get(q)) {
                    (Some(&x), Some(&y)) if x == y => {
                        p += 1;
                        q += 1;
                        (x, va[p - 1] + scale * vb[q - 1])
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        p += 1;
                        (x, va[p - 1])
                    }
                    (Some(&x), None) => {
                        p += 1;
                        (x, va[p - 1])
                    }
                    (_, Some(&y)) => {
                        q += 1;
                        (y, scale * vb[q - 1])
                    }
                    (None, None) => unreachable!(),
                };
                col_idx.push(c);
                values.push(v);
            }
            row_ptr[i + 1] = col_idx.len();
        }
        Ok(CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn scaled(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A − Aᵀ|` over all entries.
    pub fn symmetry_defect(&self) -> f64 {
        (0..self.nrows)
            .flat_map(|i| {
                let (cols, vals) = self.row(i);
                cols.iter().zip(vals).map(move |(j, v)| (i, *j, *v))
            })
            .map(|(i, j, v)| {
                if j < self.nrows && i < self.ncols {
                    (v - self.get(j, i)).abs()
                } else {
                    v.abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (c, v) in cols.iter().zip(vals) {
                row[*c] = *v;
            }
        }
        d
    }
}

/// Reverse Cuthill-McKee ordering of the symmetrized sparsity graph.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).0.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    while order.len() < n {
        // Pseudo-peripheral start: unvisited node of least degree.
        let start = (0..n)
            .filter(|i| !visited[*i])
            .min_by_key(|i| degree[*i])
            .expect("unvisited node exists");
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(a.row(v).0.iter().copied().filter(|u| !visited[*u]));
            nbrs.sort_by_key(|u| degree[*u]);
            for &u in &nbrs {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Direct factorization of a symmetric sparse matrix, reused for many
/// right-hand sides. Tries a supernodal sparse Cholesky first and falls back
/// to [`EnvelopeLdlt`] when the matrix is not positive definite.
#[derive(Clone, Debug)]
pub struct Factorization {
    backend: Backend,
    matrix: CsrMatrix,
}

#[derive(Clone, Debug)]
enum Backend {
    Cholesky(Llt<usize, f64>),
    Envelope(EnvelopeLdlt),
}

impl Factorization {
    /// Factorizes `a`, which must be square and structurally symmetric.
    pub fn new(a: &CsrMatrix) -> Result<Factorization> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidArgument(format!(
                "cannot factorize a {}×{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let backend = match cholesky(a)? {
            Some(llt) => Backend::Cholesky(llt),
            None => Backend::Envelope(EnvelopeLdlt::new(a)?),
        };
        Ok(Factorization { backend, matrix: a.clone() })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `"cholesky"` or `"envelope-ldlt"`.
    pub fn method(&self) -> &'static str {
        match self.backend {
            Backend::Cholesky(_) => "cholesky",
            Backend::Envelope(_) => "envelope-ldlt",
        }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    fn solve_raw(&self, b: &[f64]) -> Vec<f64> {
        match &self.backend {
            Backend::Cholesky(llt) => {
                let x = llt.solve(Col::<f64>::from_fn(b.len(), |i| b[i]));
                (0..b.len()).map(|i| x[i]).collect()
            }
            Backend::Envelope(env) => env.solve(b),
        }
    }

    /// Solves `A x = b` with one step of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim(), "rhs dimension mismatch");
        let mut x = self.solve_raw(b);
        let ax = self.matrix.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = self.solve_raw(&r);
        x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
        x
    }
}

/// Sparse Cholesky of the lower triangle; `None` if a pivot is not positive.
fn cholesky(a: &CsrMatrix) -> Result<Option<Llt<usize, f64>>> {
    let n = a.nrows();
    let triplets: Vec<Triplet<usize, usize, f64>> = (0..n)
        .flat_map(|i| {
            let (cols, vals) = a.row(i);
            cols.iter()
                .zip(vals)
                .filter(move |(c, _)| **c >= i)
                .map(move |(c, v)| Triplet::new(*c, i, *v))
        })
        .collect();
    let lower = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::InvalidArgument(format!("sparse matrix construction failed: {e:?}")))?;
    match lower.sp_cholesky(FaerSide::Lower) {
        Ok(llt) => Ok(Some(llt)),
        Err(LltError::Numeric(_)) => Ok(None),
        Err(e) => Err(Error::InvalidArgument(format!("sparse Cholesky failed: {e}"))),
    }
}

/// Envelope (profile) LDLᵀ factorization of a symmetric matrix under a
/// reverse Cuthill-McKee ordering. No pivoting: suitable for SPD and
/// quasi-definite matrices.
#[derive(Clone, Debug)]
pub struct EnvelopeLdlt {
    n: usize,
    perm: Vec<usize>,
    /// Column index of the first stored entry of each permuted row.
    first: Vec<usize>,
    /// Start of each row's strictly lower envelope in `lower`.
    offset: Vec<usize>,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl EnvelopeLdlt {
    /// Factorizes `a`, which must be square and structurally symmetric.
    pub fn new(a: &CsrMatrix) -> Result<EnvelopeLdlt> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidArgument(format!(
                "cannot factorize a {}×{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        let perm = reverse_cuthill_mckee(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (new, &old) in perm.iter().enumerate() {
            for &c in a.row(old).0 {
                let pc = inv[c];
                if pc < first[new] {
                    first[new] = pc;
                }
            }
        }
        // Symmetric structure: column envelope mirrors row envelope.
        for (new, &old) in perm.iter().enumerate() {
            for &c in a.row(old).0 {
                let pc = inv[c];
                if pc > new && new < first[pc] {
                    first[pc] = new;
                }
            }
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i]);
        }
        let mut lower = vec![0.0; offset[n]];
        let mut diag = vec![0.0; n];
        for (new, &old) in perm.iter().enumerate() {
            let (cols, vals) = a.row(old);
            for (c, v) in cols.iter().zip(vals) {
                let pc = inv[*c];
                if pc < new {
                    lower[offset[new] + pc - first[new]] = *v;
                } else if pc == new {
                    diag[new] = *v;
                }
            }
        }
        let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(f64::MIN_POSITIVE);
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = lower.split_at_mut(offset[i]);
            let row_i = &mut rest[..i - fi];
            // row_i holds A_ij, overwritten by u_ij = L_ij·D_j.
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &done[offset[j]..offset[j] + (j - fj)];
                let s = dot(&row_i[k0 - fi..j - fi], &row_j[k0 - fj..]);
                row_i[j - fi] -= s;
            }
            let mut d = diag[i];
            for j in fi..i {
                let u = row_i[j - fi];
                let l = u / diag[j];
                d -= u * l;
                row_i[j - fi] = l;
            }
            if !(d.abs() > 1e-14 * scale) {
                return Err(Error::SingularMatrix { pivot: perm[i], value: d });
            }
            diag[i] = d;
        }
        Ok(EnvelopeLdlt {
            n,
            perm,
            first,
            offset,
            lower,
            diag,
        })
    }

    /// Stored entries of the envelope.
    pub fn envelope_size(&self) -> usize {
        self.lower.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.offset[i]..self.offset[i + 1]];
            x[i] -= dot(row, &x[fi..i]);
        }
        for (xi, d) in x.iter_mut().zip(&self.diag) {
            *xi /= d;
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = x[i];
            let row = &self.lower[self.offset[i]..self.offset[i + 1]];
            for (xj, l) in x[fi..i].iter_mut().zip(row) {
                *xj -= l * xi;
            }
        }
        let mut out = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Which approximation of `S⁻¹ = (B A⁻¹ Bᵀ)⁻¹` preconditions the Schur CG.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    None,
    /// `(B_T A_TT⁻¹ B_Tᵀ)⁻¹` per group of three rows.
    #[default]
    BlockJacobi,
}

/// Block-Jacobi preconditioner for the Schur complement: the inverse local
/// Schur block `(B_T A_TT⁻¹ B_Tᵀ)⁻¹` per group of three rows. Groups must
/// touch disjoint column sets (one group per cell).
#[derive(Clone, Debug)]
pub struct SchurPreconditioner {
    blocks: Vec<Matrix3<f64>>,
}

fn row_groups(b: &CsrMatrix) -> Result<usize> {
    if b.nrows() % 3 != 0 {
        return Err(Error::InvalidArgument("constraint rows must come in triples".into()));
    }
    Ok(b.nrows() / 3)
}

fn group_columns(b: &CsrMatrix, blk: usize) -> Vec<usize> {
    let mut cols: Vec<usize> = (0..3).flat_map(|r| b.row(3 * blk + r).0.to_vec()).collect();
    cols.sort_unstable();
    cols.dedup();
    cols
}

fn apply_blocks(blocks: &[Matrix3<f64>], r: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; r.len()];
    for (k, m) in blocks.iter().enumerate() {
        let v = m * Vector3::new(r[3 * k], r[3 * k + 1], r[3 * k + 2]);
        z[3 * k..3 * k + 3].copy_from_slice(v.as_slice());
    }
    z
}

impl SchurPreconditioner {
    /// Builds the requested preconditioner; `None` for [`PreconditionerKind::None`].
    pub fn build(kind: PreconditionerKind, a: &CsrMatrix, b: &CsrMatrix) -> Result<Option<Self>> {
        match kind {
            PreconditionerKind::None => Ok(None),
            PreconditionerKind::BlockJacobi => Self::block_jacobi(a, b).map(Some),
        }
    }

    pub fn block_jacobi(a: &CsrMatrix, b: &CsrMatrix) -> Result<Self> {
        let blocks = (0..row_groups(b)?)
            .into_par_iter()
            .map(|blk| {
                let cols = group_columns(b, blk);
                let m = cols.len();
                let a_blk = DMatrix::from_fn(m, m, |i, j| a.get(cols[i], cols[j]));
                let b_blk = DMatrix::from_fn(3, m, |r, j| b.get(3 * blk + r, cols[j]));
                let s = match a_blk.clone().cholesky() {
                    Some(ch) => &b_blk * ch.solve(&b_blk.transpose()),
                    None => {
                        let lu = a_blk.lu();
                        &b_blk * lu.solve(&b_blk.transpose()).unwrap_or_else(|| DMatrix::zeros(m, 3))
                    }
                };
                Matrix3::from_fn(|i, j| s[(i, j)]).try_inverse().unwrap_or_else(Matrix3::identity)
            })
            .collect();
        Ok(SchurPreconditioner { blocks })
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        apply_blocks(&self.blocks, r)
    }
}

/// Returns `A + ρ BᵀWB` with `W` the per-triple inverse local Schur blocks,
/// together with the block-Jacobi preconditioner built from `A`.
///
/// When the constraint is homogeneous (`Bδ = 0`) the augmented saddle system
/// has the same solution, while its Schur complement satisfies
/// `S_ρ⁻¹ = S⁻¹ + ρW`, so block-Jacobi preconditioned CG converges in a few
/// iterations once `ρ` dominates the spread of `WS`.
pub fn augment_constraints(
    a: &CsrMatrix,
    b: &CsrMatrix,
    rho: f64,
) -> Result<(CsrMatrix, SchurPreconditioner)> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("augmentation weight must be positive, got {rho}")));
    }
    let pre = SchurPreconditioner::block_jacobi(a, b)?;
    let triplets: Vec<(usize, usize, f64)> = pre
        .blocks
        .par_iter()
        .enumerate()
        .flat_map_iter(|(blk, w)| {
            let cols = group_columns(b, blk);
            let m = cols.len();
            let b_blk = DMatrix::from_fn(3, m, |r, j| b.get(3 * blk + r, cols[j]));
            let w = DMatrix::from_fn(3, 3, |i, j| rho * w[(i, j)]);
            let local = b_blk.transpose() * w * &b_blk;
            let mut out = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m {
                    out.push((cols[i], cols[j], local[(i, j)]));
                }
            }
            out.into_iter()
        })
        .collect();
    let extra = CsrMatrix::from_triplets(a.nrows(), a.ncols(), triplets)?;
    Ok((a.add_scaled(&extra, 1.0)?, pre))
}

/// Options for [`schur_cg_with`].
#[derive(Clone, Debug)]
pub struct CgOptions<'a> {
    /// Relative residual target on `S Λ = B A⁻¹ F`.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting multiplier, e.g. the previous flow step's.
    pub initial_lambda: Option<&'a [f64]>,
    pub preconditioner: Option<&'a SchurPreconditioner>,
    /// Iterations without a new best residual before giving up as a plateau.
    pub plateau_window: usize,
}

impl Default for CgOptions<'_> {
    fn default() -> Self {
        CgOptions {
            tol: 1e-8,
            max_iter: 1000,
            initial_lambda: None,
            preconditioner: None,
            plateau_window: 50,
        }
    }
}

/// Result of a saddle-point solve.
#[derive(Clone, Debug)]
pub struct SchurSolution {
    pub delta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    /// Final `‖S Λ − B A⁻¹ F‖ / ‖B A⁻¹ F‖`; equals `‖B δ‖` up to scaling.
    pub residual: f64,
    /// True when CG stalled and the best iterate was returned.
    pub plateaued: bool,
}

/// Solves `[A Bᵀ; B 0][δ; Λ] = [F; 0]` by CG on the Schur complement.
pub fn schur_cg(
    a: &Factorization,
    b: &CsrMatrix,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SchurSolution> {
    schur_cg_with(
        a,
        b,
        rhs,
        &CgOptions {
            tol,
            max_iter,
            ..Default::default()
        },
    )
}

pub fn schur_cg_with(
    a: &Factorization,
    b: &CsrMatrix,
    rhs: &[f64],
    opts: &CgOptions<'_>,
) -> Result<SchurSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("CG tolerance {} must be positive", opts.tol)));
    }
    if b.ncols() != a.dim() || rhs.len() != a.dim() {
        return Err(Error::InvalidArgument("saddle system dimension mismatch".into()));
    }
    let m = b.nrows();
    let w = a.solve(rhs);
    if m == 0 {
        return Ok(SchurSolution {
            delta: w,
            lambda: Vec::new(),
            iterations: 0,
            residual: 0.0,
            plateaued: false,
        });
    }
    let d = b.matvec(&w);
    let d_norm = norm(&d);
    let mut lambda = match opts.initial_lambda {
        Some(l) if l.len() == m => l.to_vec(),
        _ => vec![0.0; m],
    };
    // z = A⁻¹ Bᵀ Λ, kept in step with Λ.
    let mut z = if lambda.iter().any(|v| *v != 0.0) {
        a.solve(&b.transpose_matvec(&lambda))
    } else {
        vec![0.0; a.dim()]
    };
    let mut r: Vec<f64> = {
        let s_l = b.matvec(&z);
        d.iter().zip(&s_l).map(|(d, s)| d - s).collect()
    };
    let target = opts.tol * d_norm;
    let mut r_norm = norm(&r);
    let finish = |lambda: Vec<f64>, z: &[f64], iterations, res: f64, plateaued| SchurSolution {
        delta: w.iter().zip(z).map(|(w, z)| w - z).collect(),
        lambda,
        iterations,
        residual: if d_norm > 0.0 { res / d_norm } else { res },
        plateaued,
    };
    if r_norm <= target || d_norm == 0.0 {
        return Ok(finish(lambda, &z, 0, r_norm, false));
    }
    let precond = |r: &[f64]| opts.preconditioner.map_or_else(|| r.to_vec(), |p| p.apply(r));
    let mut s = precond(&r);
    let mut p = s.clone();
    let mut rs = dot(&r, &s);
    let (mut best, mut best_lambda, mut best_z, mut since_best) = (r_norm, lambda.clone(), z.clone(), 0);
    for it in 1..=opts.max_iter {
        let ap = a.solve(&b.transpose_matvec(&p));
        let sp = b.matvec(&ap);
        let curv = dot(&p, &sp);
        if !(curv > 0.0) {
            warn!("Schur CG lost positive curvature at iteration {it}");
            return Ok(finish(best_lambda, &best_z, it, best, true));
        }
        let alpha = rs / curv;
        for k in 0..m {
            lambda[k] += alpha * p[k];
            r[k] -= alpha * sp[k];
        }
        z.iter_mut().zip(&ap).for_each(|(z, a)| *z += alpha * a);
        r_norm = norm(&r);
        if r_norm <= target {
            return Ok(finish(lambda, &z, it, r_norm, false));
        }
        if r_norm < best {
            best = r_norm;
            best_lambda.clone_from(&lambda);
            best_z.clone_from(&z);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.plateau_window {
                warn!(
                    "Schur CG plateau at relative residual {:.3e} after {it} iterations",
                    best / d_norm
                );
                return Ok(finish(best_lambda, &best_z, it, best, true));
            }
        }
        s = precond(&r);
        let rs_new = dot(&r, &s);
        let beta = rs_new / rs;
        rs = rs_new;
        for k in 0..m {
            p[k] = s[k] + beta * p[k];
        }
    }
    let sol = finish(best_lambda, &best_z, opts.max_iter, best, false);
    Err(Error::IterativeFailure {
        iterations: opts.max_iter,
        residual: sol.residual,
        best_lambda: sol.lambda,
        best_delta: sol.delta,
    })
}
