//! The constrained discrete H²-gradient flow.
//!
//! Each step solves
//! `τ⁻¹(δy, v)_{H²_h} + a_h(δy, v) = −a_h(y, v) + (f, v)` for all `v` with
//! `L_T[y; v] = 0` on every cell, via the Schur complement of the saddle
//! system. The system matrix is fixed for a run and factorized once; by
//! default each step additionally factorizes the constraint-augmented matrix,
//! which keeps the Schur CG down to a few iterations.

use std::sync::Arc;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::assembly::{constraint_operator, dot, isometry_defect, AssembledForms, FormAssembler};
use crate::dgspace::{identity_phi, BoundaryData, DgSpace, Field};
use crate::linalg::{augment_constraints, schur_cg_with, CgOptions, CsrMatrix, Factorization, PreconditionerKind, SchurPreconditioner};
use crate::{Error, Point2, Result, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    /// Admissible set is `{y₃ ≤ ceiling}`.
    pub ceiling: f64,
    /// Penalty `σ⁻¹‖y − s‖²`.
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationConfig {
    pub alpha_increment: f64,
}

fn default_cg_tol() -> f64 {
    1e-8
}

fn default_stop_tol() -> f64 {
    1e-6
}

fn default_max_steps() -> usize {
    1000
}

fn default_augmentation() -> f64 {
    10.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub tau: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    /// Defaults to ten times the number of multiplier rows.
    #[serde(default)]
    pub cg_maxiter: Option<usize>,
    /// Stop once `‖δy‖_{H²_h} ≤ stop_tol·τ`.
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub obstacle: Option<ObstacleConfig>,
    #[serde(default)]
    pub continuation: Option<ContinuationConfig>,
    #[serde(default)]
    pub preconditioner: PreconditionerKind,
    /// Start each CG solve from the previous multiplier.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Weight `ρ` of the per-step augmentation `A + ρBᵀWB`; zero keeps the
    /// fixed system matrix and its single factorization. The augmented path
    /// always uses block-Jacobi preconditioning.
    #[serde(default = "default_augmentation")]
    pub augmentation: f64,
}

impl FlowConfig {
    pub fn new(tau: f64, gamma0: f64, gamma1: f64) -> FlowConfig {
        FlowConfig {
            tau,
            gamma0,
            gamma1,
            cg_tol: default_cg_tol(),
            cg_maxiter: None,
            stop_tol: default_stop_tol(),
            max_steps: default_max_steps(),
            obstacle: None,
            continuation: None,
            preconditioner: PreconditionerKind::default(),
            warm_start: true,
            augmentation: default_augmentation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.gamma0 > 0.0 && self.gamma1 > 0.0) {
            return bad("gamma0 and gamma1 must be positive".into());
        }
        if !(self.cg_tol > 0.0) || !(self.stop_tol >= 0.0) {
            return bad("cg_tol must be positive and stop_tol nonnegative".into());
        }
        if !(self.augmentation >= 0.0) {
            return bad(format!("augmentation must be nonnegative, got {}", self.augmentation));
        }
        if let Some(o) = &self.obstacle {
            if !(o.sigma > 0.0) {
                return bad(format!("obstacle sigma must be positive, got {}", o.sigma));
            }
        }
        if let Some(c) = &self.continuation {
            if !(c.alpha_increment > 0.0 && c.alpha_increment <= 1.0) {
                return bad(format!("alpha_increment must lie in (0, 1], got {}", c.alpha_increment));
            }
        }
        Ok(())
    }
}

/// One accepted flow step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub energy: f64,
    pub defect: f64,
    /// `‖δy‖_{H²_h}`.
    pub step_norm: f64,
    pub cg_iterations: usize,
    pub alpha: f64,
    /// `‖∇_h δy‖²_{L²}`.
    pub grad_increment_sq: f64,
    /// `max_T |L_T[y^n; δy]|`.
    pub constraint_residual: f64,
}

/// History of a run. The final field is kept in memory only.
#[derive(Clone, Debug, Serialize)]
pub struct FlowTrace {
    pub initial_energy: f64,
    pub initial_defect: f64,
    pub steps: Vec<StepRecord>,
    pub converged: bool,
    /// Message of the error that ended the run early, if any.
    pub failure: Option<String>,
    #[serde(skip)]
    pub final_state: Option<Field>,
}

impl FlowTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    pub fn final_energy(&self) -> f64 {
        self.steps.last().map_or(self.initial_energy, |s| s.energy)
    }

    pub fn final_defect(&self) -> f64 {
        self.steps.last().map_or(self.initial_defect, |s| s.defect)
    }

    /// `D_h[y⁰] + Σ‖∇_h δy‖²`, the telescoped bound on the final defect.
    pub fn defect_bound(&self) -> f64 {
        self.initial_defect + self.steps.iter().map(|s| s.grad_increment_sq).sum::<f64>()
    }

    /// `Σ τ⁻¹‖δy‖²_{H²_h}`.
    pub fn dissipation(&self, tau: f64) -> f64 {
        self.steps.iter().map(|s| s.step_norm * s.step_norm).sum::<f64>() / tau
    }
}

/// Result of a single step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: Field,
    pub increment: Vec<f64>,
    pub step_norm: f64,
    pub cg_iterations: usize,
    pub constraint_residual: f64,
}

/// Gradient-flow driver owning the assembled forms and the factorized
/// step matrix.
pub struct GradientFlow {
    space: Arc<DgSpace>,
    assembler: FormAssembler,
    forms: AssembledForms,
    config: FlowConfig,
    system: Factorization,
    lambda: Option<Vec<f64>>,
}

/// `φ(α) = (1 − α)·id + α·g` and `Φ(α) = (1 − α)[I₂, 0]ᵀ + αΦ`.
pub fn continuation_data(target: &BoundaryData, alpha: f64) -> BoundaryData {
    let (tg, tp) = (target.clone(), target.clone());
    BoundaryData::new(
        move |x: Point2| -> Vec3 {
            let g = tg.g(x);
            [
                (1.0 - alpha) * x[0] + alpha * g[0],
                (1.0 - alpha) * x[1] + alpha * g[1],
                alpha * g[2],
            ]
        },
        move |x| {
            let p = tp.phi(x);
            let id = identity_phi();
            std::array::from_fn(|c| std::array::from_fn(|j| (1.0 - alpha) * id[c][j] + alpha * p[c][j]))
        },
    )
}

impl GradientFlow {
    /// Assembles all forms for `data` and load `f`, then factorizes the step
    /// matrix `τ⁻¹G + A0` (plus `(2/σ)M` for obstacle runs).
    pub fn new(
        space: Arc<DgSpace>,
        config: FlowConfig,
        data: &BoundaryData,
        f: impl Fn(Point2) -> Vec3 + Sync,
    ) -> Result<GradientFlow> {
        config.validate()?;
        let assembler = FormAssembler::new(space.clone(), config.gamma0, config.gamma1)?;
        let forms = assembler.assemble_all(data, f)?;
        let mut a = forms.a0.add_scaled(&forms.g, 1.0 / config.tau)?;
        if let Some(o) = &config.obstacle {
            a = a.add_scaled(&forms.m, 2.0 / o.sigma)?;
        }
        let system = Factorization::new(&a)?;
        debug!(
            "step matrix: {} dofs, {} nonzeros, factorized by {}",
            a.nrows(),
            a.nnz(),
            system.method()
        );
        Ok(GradientFlow {
            space,
            assembler,
            forms,
            config,
            system,
            lambda: None,
        })
    }

    pub fn space(&self) -> &Arc<DgSpace> {
        &self.space
    }

    pub fn forms(&self) -> &AssembledForms {
        &self.forms
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn system_matrix(&self) -> &CsrMatrix {
        self.system.matrix()
    }

    /// Replaces the boundary data; only `l_bc` and `c_bc` change.
    pub fn set_boundary_data(&mut self, data: &BoundaryData) {
        let (l, c) = self.assembler.assemble_data_terms(data);
        self.forms.l_bc = l;
        self.forms.c_bc = c;
    }

    /// `E_h[y]`, with `a_h(y, y)` evaluated by quadrature.
    pub fn energy(&self, y: &Field) -> f64 {
        0.5 * self.assembler.bending_by_quadrature(y) - dot(&y.coeffs, &self.forms.l_f)
    }

    pub fn defect(&self, y: &Field) -> f64 {
        isometry_defect(&self.space, &y.coeffs)
    }

    /// Right-hand side of the step equation at `y`.
    ///
    /// `a_h(y, ·)` is evaluated by quadrature against `y.data`.
    pub fn rhs(&self, y: &Field) -> Vec<f64> {
        let mut rhs = self.assembler.residual_by_quadrature(y);
        rhs.iter_mut().zip(&self.forms.l_f).for_each(|(r, f)| *r = f - *r);
        if let Some(o) = &self.config.obstacle {
            let s = self.space.l2_project_obstacle(y, o.ceiling);
            let diff: Vec<f64> = s.coeffs.iter().zip(&y.coeffs).map(|(s, y)| s - y).collect();
            let md = self.forms.m.matvec(&diff);
            rhs.iter_mut().zip(&md).for_each(|(r, m)| *r += 2.0 / o.sigma * m);
        }
        rhs
    }

    /// One flow step from `y`.
    pub fn step(&mut self, y: &Field) -> Result<StepOutcome> {
        let rhs = self.rhs(y);
        let b = constraint_operator(&self.space, &y.coeffs)?;
        let warm = if self.config.warm_start { self.lambda.as_deref() } else { None };
        let mut opts = CgOptions {
            tol: self.config.cg_tol,
            max_iter: self.config.cg_maxiter.unwrap_or(10 * b.nrows()),
            initial_lambda: warm,
            ..Default::default()
        };
        let sol = if self.config.augmentation > 0.0 {
            let (aug, pre) = augment_constraints(self.system.matrix(), &b, self.config.augmentation)?;
            let fact = Factorization::new(&aug)?;
            opts.preconditioner = Some(&pre);
            schur_cg_with(&fact, &b, &rhs, &opts)?
        } else {
            let pre = SchurPreconditioner::build(self.config.preconditioner, self.system.matrix(), &b)?;
            opts.preconditioner = pre.as_ref();
            schur_cg_with(&self.system, &b, &rhs, &opts)?
        };
        let bd = b.matvec(&sol.delta);
        let constraint_residual = bd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let step_norm = self.forms.g.bilinear(&sol.delta, &sol.delta).max(0.0).sqrt();
        let mut state = y.clone();
        state.coeffs.iter_mut().zip(&sol.delta).for_each(|(s, d)| *s += d);
        self.lambda = Some(sol.lambda);
        Ok(StepOutcome {
            state,
            increment: sol.delta,
            step_norm,
            cg_iterations: sol.iterations,
            constraint_residual,
        })
    }

    /// Runs the flow from `initial` until the step norm drops below
    /// `stop_tol·τ` or `max_steps` is reached. With a continuation config the
    /// boundary data is driven from the identity towards `initial.data`.
    ///
    /// A step that fails ends the run; the error is stored in
    /// [`FlowTrace::failure`] together with the partial history.
    pub fn run(&mut self, initial: &Field) -> FlowTrace {
        self.run_observed(initial, |_, _| {})
    }

    /// [`GradientFlow::run`] calling `observer` after every recorded step.
    pub fn run_observed(&mut self, initial: &Field, mut observer: impl FnMut(&StepRecord, &Field)) -> FlowTrace {
        let target = initial.data.clone();
        let mut alpha = if self.config.continuation.is_some() { 0.0 } else { 1.0 };
        let mut y = initial.clone();
        if self.config.continuation.is_some() {
            y.data = continuation_data(&target, alpha);
            self.set_boundary_data(&y.data);
        }
        let initial_defect = self.defect(&y);
        if initial_defect > self.config.tau {
            warn!("initial defect {initial_defect:.3e} exceeds tau = {}", self.config.tau);
        }
        let mut trace = FlowTrace {
            initial_energy: self.energy(&y),
            initial_defect,
            steps: Vec::new(),
            converged: false,
            failure: None,
            final_state: None,
        };
        let stop = self.config.stop_tol * self.config.tau;
        for n in 0..self.config.max_steps {
            if let Some(c) = &self.config.continuation {
                if alpha < 1.0 {
                    alpha = (alpha + c.alpha_increment).min(1.0);
                    y.data = continuation_data(&target, alpha);
                    self.set_boundary_data(&y.data);
                }
            }
            let out = match self.step(&y) {
                Ok(o) => o,
                Err(e) => {
                    warn!("flow step {} failed: {e}", n + 1);
                    trace.failure = Some(e.to_string());
                    break;
                }
            };
            let small = out.step_norm <= stop;
            let grad_increment_sq = self.space.broken_grad_norm_sq(&out.increment);
            y = out.state;
            if small && alpha >= 1.0 {
                trace.converged = true;
                break;
            }
            let rec = StepRecord {
                step: trace.steps.len() + 1,
                energy: self.energy(&y),
                defect: self.defect(&y),
                step_norm: out.step_norm,
                cg_iterations: out.cg_iterations,
                alpha,
                grad_increment_sq,
                constraint_residual: out.constraint_residual,
            };
            debug!(
                "step {}: E_h = {:.6e}, D_h = {:.3e}, |dy| = {:.3e}, cg = {}",
                rec.step, rec.energy, rec.defect, rec.step_norm, rec.cg_iterations
            );
            observer(&rec, &y);
            trace.steps.push(rec);
        }
        if trace.failure.is_none() && trace.final_defect() > trace.defect_bound() + 1e-8 {
            warn!(
                "final defect {:.3e} exceeds telescoped bound {:.3e}",
                trace.final_defect(),
                trace.defect_bound()
            );
        }
        info!(
            "flow finished after {} steps: E_h = {:.6e}, D_h = {:.3e}, converged = {}",
            trace.iterations(),
            trace.final_energy(),
            trace.final_defect(),
            trace.converged
        );
        y.data = if alpha < 1.0 { continuation_data(&target, alpha) } else { target };
        trace.final_state = Some(y);
        trace
    }
}

/// Flat initial state `(x1, x2, 0)` carrying `data`.
pub fn flat_state(space: &DgSpace, data: BoundaryData) -> Field {
    space.interpolate(|x| [x[0], x[1], 0.0], data)
}
