//! Run configuration, experiment drivers and output files.
//!
//! A config names an experiment preset and may override any of its fields;
//! the merged document is validated strictly, so misspelled keys are errors.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dgspace::{identity_phi, BoundaryData, DgSpace, Field};
use crate::flow::{ContinuationConfig, FlowConfig, FlowTrace, GradientFlow, ObstacleConfig};
use crate::mesh::{Mesh, Rect, Side};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    VerticalLoad,
    Obstacle,
    Buckling,
    Custom,
}

/// Boundary data `(g, Φ)` on ∂_D Ω.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSelector {
    /// `(0, 0)`.
    Homogeneous,
    /// `g = (x1, x2, 0)`, `Φ = [I₂, 0]ᵀ`.
    ClampedFlat,
    /// `g = (x1 − shift·sign(x1), x2, 0)`, `Φ = [I₂, 0]ᵀ`.
    Compression { shift: f64 },
    /// `g = (sin x1, x2, cos x1)` with its exact gradient.
    Cylinder,
}

impl DataSelector {
    pub fn boundary_data(&self) -> BoundaryData {
        match *self {
            DataSelector::Homogeneous => BoundaryData::homogeneous(),
            DataSelector::ClampedFlat => BoundaryData::clamped_flat(),
            DataSelector::Compression { shift } => BoundaryData::new(
                move |x| [x[0] - shift * x[0].signum(), x[1], 0.0],
                |_| identity_phi(),
            ),
            DataSelector::Cylinder => BoundaryData::new(cylinder, cylinder_gradient),
        }
    }
}

/// The unit-curvature cylinder `(sin x1, x2, cos x1)`.
pub fn cylinder(x: [f64; 2]) -> [f64; 3] {
    [x[0].sin(), x[1], x[0].cos()]
}

pub fn cylinder_gradient(x: [f64; 2]) -> [[f64; 2]; 3] {
    [[x[0].cos(), 0.0], [0.0, 1.0], [-x[0].sin(), 0.0]]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// `(x1, x2, 0)`.
    Flat,
    /// Lagrange interpolant of the cylinder.
    Cylinder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub domain: Rect,
    pub dirichlet_sides: Vec<Side>,
    pub degree: usize,
    pub quad_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    /// Constant body force.
    pub force: [f64; 3],
    pub boundary_data: DataSelector,
    pub initial: InitialState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Write `step_NNNNN.vtk` every this many steps; 0 writes only the final state.
    pub vtk_every: usize,
    pub emit_csv: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub mesh: MeshConfig,
    pub physics: PhysicsConfig,
    pub flow: FlowConfig,
    /// Use `τ = h` with `h` the largest cell diameter, overriding `flow.tau`.
    pub tau_from_mesh: bool,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Defaults for an experiment. The obstacle and buckling presets use the
    /// reference parameters. The buckling mesh is desk-sized.
    pub fn preset(experiment: Experiment) -> RunConfig {
        let output = OutputConfig {
            directory: PathBuf::from("output"),
            vtk_every: 0,
            emit_csv: true,
        };
        let physics = |force, boundary_data| PhysicsConfig {
            force,
            boundary_data,
            initial: InitialState::Flat,
        };
        let mesh = |nx, ny, domain, sides: &[Side]| MeshConfig {
            nx,
            ny,
            domain,
            dirichlet_sides: sides.to_vec(),
            degree: 2,
            quad_points: 3,
        };
        match experiment {
            Experiment::VerticalLoad => RunConfig {
                experiment,
                mesh: mesh(16, 16, Rect::new(0.0, 4.0, 0.0, 4.0), &[Side::Left, Side::Bottom]),
                physics: physics([0.0, 0.0, 2.5e-2], DataSelector::ClampedFlat),
                flow: FlowConfig::new(2f64.sqrt() / 4.0, 5000.0, 1100.0),
                tau_from_mesh: true,
                output,
            },
            Experiment::Obstacle => RunConfig {
                experiment,
                mesh: mesh(32, 32, Rect::new(-1.0, 1.0, -1.0, 1.0), &[Side::Left]),
                physics: physics([0.0, 0.0, 1.0], DataSelector::ClampedFlat),
                flow: FlowConfig {
                    max_steps: 20_000,
                    obstacle: Some(ObstacleConfig {
                        ceiling: 0.2,
                        sigma: 3e-4,
                    }),
                    ..FlowConfig::new(5e-4, 5000.0, 5000.0)
                },
                tau_from_mesh: false,
                output,
            },
            Experiment::Buckling => RunConfig {
                experiment,
                mesh: mesh(16, 4, Rect::new(-2.0, 2.0, 0.0, 1.0), &[Side::Left, Side::Right]),
                physics: physics([0.0, 0.0, 1e-2], DataSelector::Compression { shift: 1.4 }),
                flow: FlowConfig {
                    max_steps: 40_000,
                    continuation: Some(ContinuationConfig { alpha_increment: 5e-5 }),
                    ..FlowConfig::new(0.04625, 1e4, 1e4)
                },
                tau_from_mesh: false,
                output,
            },
            Experiment::Custom => RunConfig {
                experiment,
                mesh: mesh(4, 4, Rect::unit(), &[Side::Left, Side::Right, Side::Bottom, Side::Top]),
                physics: physics([0.0; 3], DataSelector::ClampedFlat),
                flow: FlowConfig::new(0.1, 5000.0, 5000.0),
                tau_from_mesh: false,
                output,
            },
        }
    }

    /// Parses a config: the `experiment` key selects a preset and every other
    /// key overrides it. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let user: Value = serde_json::from_str(text)?;
        let experiment: Experiment = serde_json::from_value(
            user.get("experiment")
                .cloned()
                .ok_or_else(|| Error::Config("missing key `experiment`".into()))?,
        )?;
        let mut merged = serde_json::to_value(RunConfig::preset(experiment))?;
        merge(&mut merged, user);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        RunConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            return Err(Error::Config("mesh.nx and mesh.ny must be positive".into()));
        }
        if self.mesh.degree < 2 {
            return Err(Error::Config("mesh.degree must be at least 2".into()));
        }
        if self.mesh.quad_points < self.mesh.degree + 1 {
            return Err(Error::Config("mesh.quad_points must be at least degree + 1".into()));
        }
        self.flow.validate()
    }

    /// Copy refined `2^level` times in each direction.
    pub fn refined(&self, level: u32) -> RunConfig {
        let mut c = self.clone();
        c.mesh.nx <<= level;
        c.mesh.ny <<= level;
        c
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // Tagged enums are replaced whole.
                    Some(slot) if slot.is_object() && v.is_object() && !v.get("kind").is_some() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Everything a run produces, in memory.
pub struct RunOutcome {
    pub config: RunConfig,
    pub space: Arc<DgSpace>,
    pub trace: FlowTrace,
    pub tau: f64,
}

impl RunOutcome {
    pub fn final_state(&self) -> &Field {
        self.trace.final_state.as_ref().expect("run stores its final state")
    }

    pub fn table_row(&self) -> TableRow {
        TableRow {
            cells: self.space.n_cells(),
            dofs: self.space.n_dofs(),
            h: self.space.mesh().h_max(),
            tau: self.tau,
            energy: self.trace.final_energy(),
            defect: self.trace.final_defect(),
            iterations: self.trace.iterations(),
        }
    }

    /// `max_nodes (y₃ − ceiling)`.
    pub fn max_penetration(&self, ceiling: f64) -> f64 {
        let y = self.final_state();
        self.space
            .nodal_values(y, 2)
            .expect("component 2 exists")
            .into_iter()
            .fold(f64::MIN, f64::max)
            - ceiling
    }
}

/// One row of the convergence table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TableRow {
    pub cells: usize,
    pub dofs: usize,
    pub h: f64,
    pub tau: f64,
    pub energy: f64,
    pub defect: f64,
    pub iterations: usize,
}

pub const TABLE_HEADER: &str = "cells,dofs,h,tau,E_h,D_h,iterations";

impl TableRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{}",
            self.cells, self.dofs, self.h, self.tau, self.energy, self.defect, self.iterations
        )
    }
}

pub fn build_space(cfg: &RunConfig) -> Result<Arc<DgSpace>> {
    let m = &cfg.mesh;
    let mesh = Mesh::rectangle(m.domain, m.nx, m.ny, &m.dirichlet_sides)?;
    Ok(Arc::new(DgSpace::new(Arc::new(mesh), m.degree, m.quad_points)?))
}

/// Runs the configured flow without touching the filesystem.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    simulate_observed(cfg, |_, _| {})
}

fn simulate_observed(
    cfg: &RunConfig,
    observer: impl FnMut(&crate::flow::StepRecord, &Field),
) -> Result<RunOutcome> {
    cfg.validate()?;
    let space = build_space(cfg)?;
    let mut flow_cfg = cfg.flow.clone();
    if cfg.tau_from_mesh {
        flow_cfg.tau = space.mesh().h_max();
    }
    let tau = flow_cfg.tau;
    let data = cfg.physics.boundary_data.boundary_data();
    let force = cfg.physics.force;
    let mut flow = GradientFlow::new(space.clone(), flow_cfg, &data, move |_| force)?;
    let initial = match cfg.physics.initial {
        InitialState::Flat => space.interpolate(|x| [x[0], x[1], 0.0], data),
        InitialState::Cylinder => space.interpolate(cylinder, data),
    };
    let trace = flow.run_observed(&initial, observer);
    Ok(RunOutcome {
        config: cfg.clone(),
        space,
        trace,
        tau,
    })
}

/// Runs an experiment and writes `trace.json`, `final.vtk`, `table.csv` and,
/// for the vertical load, `diagonal.csv` into the output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    let dir = &cfg.output.directory;
    fs::create_dir_all(dir)?;
    let mut vtk_error = None;
    let every = cfg.output.vtk_every;
    let space = build_space(cfg)?;
    let outcome = simulate_observed(cfg, |rec, y| {
        if every > 0 && rec.step % every == 0 && vtk_error.is_none() {
            if let Err(e) = emit_vtk(y, &space, &dir.join(format!("step_{:05}.vtk", rec.step))) {
                vtk_error = Some(e);
            }
        }
    })?;
    if let Some(e) = vtk_error {
        return Err(e);
    }
    fs::write(dir.join("trace.json"), serde_json::to_string_pretty(&outcome.trace)?)?;
    emit_vtk(outcome.final_state(), &outcome.space, &dir.join("final.vtk"))?;
    if cfg.output.emit_csv {
        fs::write(
            dir.join("table.csv"),
            format!("{TABLE_HEADER}\n{}\n", outcome.table_row().csv()),
        )?;
        if cfg.experiment == Experiment::VerticalLoad {
            emit_diagonal_csv(outcome.final_state(), &outcome.space, 101, &dir.join("diagonal.csv"))?;
        }
    }
    info!("wrote artifacts to {}", dir.display());
    Ok(outcome)
}

/// Result of one convergence level.
#[derive(Clone, Debug)]
pub enum LevelResult {
    Ok(TableRow),
    Failed { cells: usize, error: String },
}

/// Runs `levels` uniform refinements of `base` (τ = h when `tau_from_mesh`)
/// and writes `convergence.csv`. A failing level is recorded and skipped.
pub fn run_convergence(base: &RunConfig, levels: u32) -> Result<Vec<LevelResult>> {
    if levels == 0 {
        return Err(Error::Config("levels must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for l in 0..levels {
        let cfg = base.refined(l);
        let cells = cfg.mesh.nx * cfg.mesh.ny;
        let res = simulate(&cfg).and_then(|o| match &o.trace.failure {
            None => Ok(o.table_row()),
            Some(msg) => Err(Error::Config(msg.clone())),
        });
        rows.push(match res {
            Ok(r) => {
                info!("level {l}: {}", r.csv());
                LevelResult::Ok(r)
            }
            Err(e) => {
                warn!("level {l} ({cells} cells) failed: {e}");
                LevelResult::Failed {
                    cells,
                    error: e.to_string(),
                }
            }
        });
    }
    if base.output.emit_csv {
        fs::create_dir_all(&base.output.directory)?;
        fs::write(base.output.directory.join("convergence.csv"), convergence_csv(&rows))?;
    }
    Ok(rows)
}

/// CSV of a convergence study; failed levels get empty numeric fields.
pub fn convergence_csv(rows: &[LevelResult]) -> String {
    let mut s = format!("{TABLE_HEADER},defect_ratio\n");
    let mut prev: Option<f64> = None;
    for r in rows {
        match r {
            LevelResult::Ok(row) => {
                let ratio = prev.map_or(String::new(), |p| format!("{:.3}", p / row.defect));
                let _ = writeln!(s, "{},{ratio}", row.csv());
                prev = Some(row.defect);
            }
            LevelResult::Failed { cells, .. } => {
                let _ = writeln!(s, "{cells},,,,,,,");
                prev = None;
            }
        }
    }
    s
}

/// `|y − (x, 0)|` sampled at `n` points along the segment from `(0, 4)` to
/// `(4, 0)`; assumes the vertical-load domain.
pub fn emit_diagonal_csv(y: &Field, space: &DgSpace, n: usize, path: &Path) -> Result<()> {
    let mut s = String::from("s,x1,x2,displacement\n");
    for k in 0..n {
        let t = k as f64 / (n.max(2) - 1) as f64;
        let x = [4.0 * t, 4.0 * (1.0 - t)];
        if let Some(v) = space.evaluate_at(y, x) {
            let d = ((v[0] - x[0]).powi(2) + (v[1] - x[1]).powi(2) + v[2].powi(2)).sqrt();
            let _ = writeln!(s, "{t:.6},{:.6},{:.6},{d:.9e}", x[0], x[1]);
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Legacy ASCII VTK of the deformed surface: the Lagrange nodes of every
/// cell are points, each cell is split into `k²` quads.
pub fn emit_vtk(y: &Field, space: &DgSpace, path: &Path) -> Result<()> {
    fs::write(path, vtk_string(y, space))?;
    Ok(())
}

pub fn vtk_string(y: &Field, space: &DgSpace) -> String {
    let nl = space.n_local();
    let n1 = space.basis().n_1d();
    let k = n1 - 1;
    let n_points = nl * space.n_cells();
    let n_quads = k * k * space.n_cells();
    let mut s = String::with_capacity(64 * n_points);
    s.push_str("# vtk DataFile Version 3.0\nplate deformation\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {n_points} double");
    let mut disp = Vec::with_capacity(n_points);
    let mut height = Vec::with_capacity(n_points);
    for cell in 0..space.n_cells() {
        let nodes = space.node_points(cell);
        for (i, x) in nodes.iter().enumerate() {
            let p: [f64; 3] = std::array::from_fn(|c| y.coeffs[space.dof(cell, c, i)]);
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
            disp.push(((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2) + p[2].powi(2)).sqrt());
            height.push(p[2]);
        }
    }
    let _ = writeln!(s, "CELLS {n_quads} {}", 5 * n_quads);
    for cell in 0..space.n_cells() {
        let base = cell * nl;
        for b in 0..k {
            for a in 0..k {
                let id = |a: usize, b: usize| base + a + n1 * b;
                let _ = writeln!(s, "4 {} {} {} {}", id(a, b), id(a + 1, b), id(a + 1, b + 1), id(a, b + 1));
            }
        }
    }
    let _ = writeln!(s, "CELL_TYPES {n_quads}");
    for _ in 0..n_quads {
        s.push_str("9\n");
    }
    let _ = writeln!(s, "POINT_DATA {n_points}");
    for (name, vals) in [("displacement", &disp), ("height", &height)] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in vals {
            let _ = writeln!(s, "{v:.17e}");
        }
    }
    s
}
