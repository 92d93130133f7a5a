//! Discontinuous Galerkin approximation of large isometric bending
//! deformations of Kirchhoff plates.
//!
//! The crate assembles the interior-penalty bending energy on rectangular
//! quadrilateral meshes with Nitsche boundary conditions, runs the
//! constrained H²-gradient flow that drives a deformation towards a discrete
//! minimizer while keeping the isometry defect controlled, and reconstructs a
//! discrete Hessian through lifting operators for verification.
//!
//! Module map:
//! - [`mesh`]: quadrilateral meshes, the edge skeleton and bilinear geometry maps
//! - [`refelem`]: tensor Lagrange basis, Gauss rules and chain-rule push-forward
//! - [`dgspace`]: vector-valued broken space, fields, jumps and averages
//! - [`assembly`]: bilinear forms, energy, isometry defect and constraint rows
//! - [`linalg`]: CSR storage, sparse direct factorization and Schur-complement CG
//! - [`hessian`]: lifting operators and the reconstructed Hessian
//! - [`flow`]: the gradient-flow driver (plain, obstacle and continuation)
//! - [`io`]: run configuration, experiment drivers and file emitters
//! - [`verify`]: invariant checks on tiny meshes

pub mod assembly;
pub mod dgspace;
mod error;
pub mod flow;
pub mod hessian;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod refelem;
pub mod verify;

pub use assembly::{AssembledForms, FormAssembler};
pub use dgspace::{BoundaryData, DgSpace, Field};
pub use error::{Error, Result};
pub use flow::{FlowConfig, FlowTrace, GradientFlow};
pub use linalg::{CsrMatrix, Factorization};
pub use mesh::{EdgeInfo, GeometryMap, Mesh, Rect, Side};
pub use refelem::{QuadRule, RefBasis};

/// Point in the reference or physical plane.
pub type Point2 = [f64; 2];
/// Point or vector in the deformed configuration.
pub type Vec3 = [f64; 3];
/// 3×2 matrix stored row-wise: `m[c][j] = ∂_j y_c`.
pub type Mat32 = [[f64; 2]; 3];
/// 2×2 matrix.
pub type Mat2 = [[f64; 2]; 2];
