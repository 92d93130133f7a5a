//! Reference-square Lagrange basis, Gauss rules and push-forward of
//! derivatives through a bilinear geometry map.

use crate::mesh::GeometryMap;
use crate::{Error, Mat2, Point2, Result};

pub type Tensor3 = [[[f64; 2]; 2]; 2];

/// Gauss–Legendre nodes and weights on `[0, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("quadrature needs at least one point".into()));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            // Three-term recurrence; afterwards p1 = P_n(x), p0 = P_{n-1}(x).
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the i-th largest root; store symmetric pair on [0, 1].
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[n - 1 - i] = 0.5 * w;
        weights[i] = 0.5 * w;
    }
    Ok((nodes, weights))
}

/// Tensor Gauss rule on the reference square plus the matching edge rule.
#[derive(Clone, Debug)]
pub struct QuadRule {
    pub n_per_dir: usize,
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
    pub edge_points: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

impl QuadRule {
    /// `n` Gauss points per direction; exact for Q_{2n−1}.
    pub fn gauss(n: usize) -> Result<QuadRule> {
        let (x, w) = gauss_legendre(n)?;
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                points.push([x[i], x[j]]);
                weights.push(w[i] * w[j]);
            }
        }
        Ok(QuadRule {
            n_per_dir: n,
            points,
            weights,
            edge_points: x,
            edge_weights: w,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// 1D Lagrange polynomial in monomial form, lowest power first.
#[derive(Clone, Debug)]
struct Poly1(Vec<f64>);

impl Poly1 {
    fn derivative(&self) -> Poly1 {
        Poly1(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(p, c)| p as f64 * c)
                .collect(),
        )
    }

    fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

/// Tensor-product Lagrange basis of Q_k on `[0,1]²` with equispaced nodes.
/// Basis `i = a + (k+1)·b` has node `(a/k, b/k)`.
#[derive(Clone, Debug)]
pub struct RefBasis {
    degree: usize,
    /// `polys[a][m]`: m-th derivative of the a-th 1D Lagrange polynomial.
    polys: Vec<[Poly1; 4]>,
}

impl RefBasis {
    pub fn new(degree: usize) -> Result<RefBasis> {
        if degree == 0 {
            return Err(Error::InvalidArgument("basis degree must be at least 1".into()));
        }
        let nodes: Vec<f64> = (0..=degree).map(|j| j as f64 / degree as f64).collect();
        let polys = (0..=degree)
            .map(|a| {
                let mut coeffs = vec![1.0];
                for (j, &xj) in nodes.iter().enumerate() {
                    if j == a {
                        continue;
                    }
                    let denom = nodes[a] - xj;
                    let mut next = vec![0.0; coeffs.len() + 1];
                    for (p, c) in coeffs.iter().enumerate() {
                        next[p + 1] += c / denom;
                        next[p] -= c * xj / denom;
                    }
                    coeffs = next;
                }
                let p0 = Poly1(coeffs);
                let p1 = p0.derivative();
                let p2 = p1.derivative();
                let p3 = p2.derivative();
                [p0, p1, p2, p3]
            })
            .collect();
        Ok(RefBasis { degree, polys })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_1d(&self) -> usize {
        self.degree + 1
    }

    /// (k+1)².
    pub fn dim(&self) -> usize {
        self.n_1d() * self.n_1d()
    }

    pub fn node(&self, i: usize) -> Point2 {
        let k = self.degree as f64;
        [(i % self.n_1d()) as f64 / k, (i / self.n_1d()) as f64 / k]
    }

    /// Reference values and derivatives up to third order.
    pub fn eval(&self, x: Point2) -> RefDerivs {
        let n = self.n_1d();
        let mut tx = vec![[0.0; 4]; n];
        let mut ty = vec![[0.0; 4]; n];
        for a in 0..n {
            for m in 0..4 {
                tx[a][m] = self.polys[a][m].eval(x[0]);
                ty[a][m] = self.polys[a][m].eval(x[1]);
            }
        }
        let dim = self.dim();
        let mut out = RefDerivs {
            values: vec![0.0; dim],
            grads: vec![[0.0; 2]; dim],
            hessians: vec![[[0.0; 2]; 2]; dim],
            thirds: vec![[[[0.0; 2]; 2]; 2]; dim],
        };
        for b in 0..n {
            for a in 0..n {
                let i = a + n * b;
                // Derivative with `p` x-derivatives and `q` y-derivatives.
                let d = |p: usize, q: usize| tx[a][p] * ty[b][q];
                out.values[i] = d(0, 0);
                out.grads[i] = [d(1, 0), d(0, 1)];
                out.hessians[i] = [[d(2, 0), d(1, 1)], [d(1, 1), d(0, 2)]];
                for u in 0..2 {
                    for v in 0..2 {
                        for w in 0..2 {
                            let q = u + v + w;
                            out.thirds[i][u][v][w] = d(3 - q, q);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Values and derivatives of every basis function at one point. On the
/// reference square these are derivatives in `x̂`; after
/// [`eval_mapped_derivatives`] they are physical derivatives.
#[derive(Clone, Debug, Default)]
pub struct RefDerivs {
    pub values: Vec<f64>,
    pub grads: Vec<Point2>,
    pub hessians: Vec<Mat2>,
    pub thirds: Vec<Tensor3>,
}

pub type MappedDerivs = RefDerivs;

/// Physical derivatives of the mapped basis `φ̂_i ∘ F⁻¹` at `F(ref_point)`,
/// up to `max_order` (entries above `max_order` are left empty).
pub fn eval_mapped_derivatives(
    basis: &RefBasis,
    map: &GeometryMap,
    ref_point: Point2,
    max_order: usize,
) -> Result<MappedDerivs> {
    if max_order > 3 {
        return Err(Error::Unsupported(format!(
            "derivatives of order {max_order} (at most 3)"
        )));
    }
    let r = basis.eval(ref_point);
    let jet = map.inverse_jet(ref_point);
    let x1 = &jet.d1;
    let x2 = &jet.d2;
    let x3 = &jet.d3;
    let dim = basis.dim();
    let mut out = MappedDerivs {
        values: r.values.clone(),
        ..Default::default()
    };
    if max_order >= 1 {
        out.grads = (0..dim)
            .map(|k| {
                let g = r.grads[k];
                [0, 1].map(|i| g[0] * x1[0][i] + g[1] * x1[1][i])
            })
            .collect();
    }
    if max_order >= 2 {
        out.hessians = (0..dim)
            .map(|k| {
                let (g, h) = (r.grads[k], r.hessians[k]);
                let mut m = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        let mut s = 0.0;
                        for a in 0..2 {
                            s += g[a] * x2[a][i][j];
                            for b in 0..2 {
                                s += h[a][b] * x1[a][i] * x1[b][j];
                            }
                        }
                        m[i][j] = s;
                    }
                }
                m
            })
            .collect();
    }
    if max_order >= 3 {
        out.thirds = (0..dim)
            .map(|k| {
                let (g, h, t) = (r.grads[k], r.hessians[k], r.thirds[k]);
                let mut m = [[[0.0; 2]; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        for l in 0..2 {
                            let mut s = 0.0;
                            for a in 0..2 {
                                s += g[a] * x3[a][i][j][l];
                                for b in 0..2 {
                                    s += h[a][b]
                                        * (x2[a][i][l] * x1[b][j]
                                            + x1[a][i] * x2[b][j][l]
                                            + x2[a][i][j] * x1[b][l]);
                                    for c in 0..2 {
                                        s += t[a][b][c] * x1[a][i] * x1[b][j] * x1[c][l];
                                    }
                                }
                            }
                            m[i][j][l] = s;
                        }
                    }
                }
                m
            })
            .collect();
    }
    Ok(out)
}
