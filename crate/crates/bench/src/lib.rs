//! Shared fixtures for the criterion benchmarks in `benches/`.

use std::sync::Arc;

use platedg::io::{build_space, Experiment, RunConfig};
use platedg::DgSpace;

/// Space of the vertical-load experiment on an `n × n` mesh.
pub fn vertical_load_space(n: usize) -> Arc<DgSpace> {
    let mut cfg = RunConfig::preset(Experiment::VerticalLoad);
    cfg.mesh.nx = n;
    cfg.mesh.ny = n;
    build_space(&cfg).expect("preset mesh is valid")
}
