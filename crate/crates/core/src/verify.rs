//! Invariant checks on built-in tiny meshes, run by `plate-dg verify`.
//!
//! Every check returns a [`Check`] with the measured value and the threshold
//! it is held to, so callers can print a table or fail fast.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{constraint_operator, dot, FormAssembler};
use crate::dgspace::{BoundaryData, DgSpace, Field};
use crate::flow::{flat_state, FlowConfig, GradientFlow};
use crate::hessian::{broken_hessian, energy_hessian_gap, global_liftings, HessianBasis};
use crate::linalg::Factorization;
use crate::mesh::{Mesh, Rect, Side};
use crate::Result;

/// Outcome of one invariant check.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, value: f64, threshold: f64) -> Check {
        Check { name, value, threshold, passed: value <= threshold }
    }

    fn at_least(name: &'static str, value: f64, threshold: f64) -> Check {
        Check { name, value, threshold, passed: value >= threshold }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} value {:>11.3e}  threshold {:>10.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold
        )
    }
}

fn tiny_space(n: usize, sides: &[Side]) -> Result<Arc<DgSpace>> {
    space_on(Rect::unit(), n, sides)
}

fn space_on(domain: Rect, n: usize, sides: &[Side]) -> Result<Arc<DgSpace>> {
    let mesh = Mesh::rectangle(domain, n, n, sides)?;
    Ok(Arc::new(DgSpace::new(Arc::new(mesh), 2, 3)?))
}

/// Flat plate plus uniform noise of size `amp` on every coefficient.
pub fn random_field(space: &DgSpace, data: &BoundaryData, amp: f64, rng: &mut impl Rng) -> Field {
    let mut y = space.interpolate(|x| [x[0], x[1], 0.0], data.clone());
    y.coeffs.iter_mut().for_each(|c| *c += amp * rng.gen_range(-1.0..1.0));
    y
}

/// Runs every check with randomized inputs drawn from `seed`.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.extend(form_checks(&mut rng)?);
    out.extend(hessian_checks(&mut rng)?);
    out.extend(flow_checks(&mut rng)?);
    Ok(out)
}

/// Symmetry, locality, coercivity and quadratic scaling of the forms on a
/// 4×4 mesh with the vertical-load penalties.
pub fn form_checks(rng: &mut impl Rng) -> Result<Vec<Check>> {
    use Side::*;
    let space = tiny_space(4, &[Left, Bottom])?;
    let fa = FormAssembler::new(space.clone(), 5000.0, 1100.0)?;
    let (a0, g, _) = fa.assemble_matrices()?;
    let scale = a0.max_abs();

    let mut adjacent = vec![vec![false; space.n_cells()]; space.n_cells()];
    for c in 0..space.n_cells() {
        adjacent[c][c] = true;
    }
    for e in &space.mesh().interior_edges {
        let p = e.cell_plus.expect("interior edge");
        adjacent[e.cell_minus][p] = true;
        adjacent[p][e.cell_minus] = true;
    }
    let stray = (0..a0.nrows())
        .flat_map(|i| {
            let (cols, vals) = a0.row(i);
            cols.iter().zip(vals).map(move |(j, v)| (i, *j, *v))
        })
        .filter(|(i, j, v)| {
            *v != 0.0 && !adjacent[space.dof_location(*i).0][space.dof_location(*j).0]
        })
        .count();

    let mut rayleigh = f64::INFINITY;
    for _ in 0..200 {
        let v: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        rayleigh = rayleigh.min(a0.bilinear(&v, &v) / g.bilinear(&v, &v));
    }

    let v: Vec<f64> = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sv: Vec<f64> = v.iter().map(|x| 2.5 * x).collect();
    let q = a0.bilinear(&v, &v);
    let scaling = (a0.bilinear(&sv, &sv) - 6.25 * q).abs() / q.abs().max(1e-300);

    Ok(vec![
        Check::at_most("a_h symmetry", a0.symmetry_defect() / scale, 1e-12),
        Check::at_most("H2 metric symmetry", g.symmetry_defect() / g.max_abs(), 1e-12),
        Check::at_most("a_h locality", stray as f64, 0.0),
        Check::at_least("coercivity Rayleigh min", rayleigh, f64::MIN_POSITIVE),
        Check::at_most("quadratic scaling", scaling, 1e-12),
    ])
}

/// Energy/Hessian identity, sign of the jump functional and the lifting
/// adjoint identities for random fields on a 4×4 mesh.
pub fn hessian_checks(rng: &mut impl Rng) -> Result<Vec<Check>> {
    use Side::*;
    let space = tiny_space(4, &[Left, Bottom])?;
    let data = BoundaryData::clamped_flat();
    let (g0, g1) = (5000.0, 5000.0);
    let fa = FormAssembler::new(space.clone(), g0, g1)?;
    let forms = fa.assemble_all(&data, |x| [0.1 * x[1], 0.0, 0.3])?;
    let basis = HessianBasis::new(&space);

    let mut identity: f64 = 0.0;
    let mut min_j = f64::INFINITY;
    let mut adjoint: f64 = 0.0;
    for _ in 0..50 {
        let y = random_field(&space, &data, 0.05, rng);
        let gap = energy_hessian_gap(&space, &basis, &y, &forms, g0, g1)?;
        identity = identity.max(gap.residual() / (1.0 + gap.energy.abs()));
        min_j = min_j.min(gap.jump_functional);

        let w = random_field(&space, &data, 0.5, rng);
        let (r, b) = adjoint_residuals(&space, &basis, &y, &w)?;
        adjoint = adjoint.max(r).max(b);
    }
    Ok(vec![
        Check::at_most("energy-Hessian identity", identity, 1e-10),
        Check::at_least("jump functional sign", min_j, -1e-12),
        Check::at_most("lifting adjoint identities", adjoint, 1e-10),
    ])
}

/// Relative residuals of `(R_h([∇y]), D²_h w) = Σ_e ∫_e [∇y]·{D²w μ}` and
/// `(B_h([y]), D²_h w) = Σ_e ∫_e [y]{∂_μ Δw}`.
pub fn adjoint_residuals(space: &DgSpace, basis: &HessianBasis, y: &Field, w: &Field) -> Result<(f64, f64)> {
    let (r, b) = global_liftings(space, basis, y);
    let tau = broken_hessian(space, basis, &w.coeffs);
    let n_q = space.quad_points();
    let (mut er, mut eb, mut mag_r, mut mag_b) = (0.0, 0.0, 0.0, 0.0);
    for e in space.mesh().skeleton() {
        let jy = space.edge_jump_average(y, e, n_q)?;
        let aw = space.edge_jump_average(w, e, n_q)?;
        for (p, q) in jy.iter().zip(&aw) {
            for c in 0..3 {
                let t = p.grad_jump[c][0] * q.avg_dmu_grad[c][0] + p.grad_jump[c][1] * q.avg_dmu_grad[c][1];
                let s = p.value_jump[c] * q.avg_dmu_lap[c];
                er += p.weight * t;
                eb += p.weight * s;
                mag_r += p.weight * t.abs();
                mag_b += p.weight * s.abs();
            }
        }
    }
    let rel = |lhs: f64, rhs: f64, mag: f64| (lhs - rhs).abs() / mag.max(1e-300);
    Ok((rel(r.dot(&tau), er, mag_r), rel(b.dot(&tau), eb, mag_b)))
}

/// Fixed point of the clamped flat plate, constraint satisfaction of one
/// loaded step, and energy decay with defect telescoping on a short run.
pub fn flow_checks(rng: &mut impl Rng) -> Result<Vec<Check>> {
    use Side::*;
    let space = space_on(Rect::new(0.0, 4.0, 0.0, 4.0), 4, &[Left, Right, Bottom, Top])?;
    let data = BoundaryData::clamped_flat();
    let cfg = FlowConfig::new(0.1, 5000.0, 1100.0);
    let mut flow = GradientFlow::new(space.clone(), cfg.clone(), &data, |_| [0.0; 3])?;
    let flat = flat_state(&space, data.clone());
    let rhs_norm = dot(&flow.rhs(&flat), &flow.rhs(&flat)).sqrt();
    let trace = flow.run(&flat);

    let space = tiny_space(4, &[Left, Bottom])?;
    let cfg = FlowConfig { max_steps: 8, ..FlowConfig::new(0.25, 5000.0, 1100.0) };
    let mut flow = GradientFlow::new(space.clone(), cfg.clone(), &data, |_| [0.0, 0.0, 0.05])?;
    let y = random_field(&space, &data, 1e-3, rng);
    let step = flow.step(&y)?;
    let b = constraint_operator(&space, &y.coeffs)?;
    let bd = b.matvec(&step.increment);
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let feasibility = inf(&bd) / (10.0 * cfg.cg_tol * (1.0 + inf(&step.increment)));

    let a = flow.system_matrix();
    let fact = Factorization::new(a)?;
    let rhs: Vec<f64> = (0..a.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let x = fact.solve(&rhs);
    let ax = a.matvec(&x);
    let res = ax.iter().zip(&rhs).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let a_norm = a.max_abs() * (a.nrows() as f64).sqrt();
    let contract = res / (a_norm * dot(&x, &x).sqrt() + dot(&rhs, &rhs).sqrt());

    let run = flow.run(&flat_state(&space, data.clone()));
    let mut prev = run.initial_energy;
    let mut rise: f64 = 0.0;
    for s in &run.steps {
        rise = rise.max((s.energy - prev) / (1.0 + prev.abs()));
        prev = s.energy;
    }
    let telescoping = run.final_defect() - run.defect_bound();

    Ok(vec![
        Check::at_most("flat plate residual", rhs_norm, 1e-10),
        Check::at_most("flat plate steps", trace.iterations() as f64, 0.0),
        Check::at_most("flat plate energy", trace.final_energy().abs(), 1e-11),
        Check::at_most("step feasibility", feasibility, 1.0),
        Check::at_most("factorization residual", contract, 1e-10),
        Check::at_most("energy decay", rise, 1e-10),
        Check::at_most("defect telescoping", telescoping, 1e-8),
    ])
}
