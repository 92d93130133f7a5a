use std::sync::Arc;

use platedg::io::{cylinder, emit_vtk, run_convergence, run_experiment, vtk_string, Experiment, LevelResult, RunConfig};
use platedg::{BoundaryData, DgSpace, Mesh, Rect, Side};

/// Points, quads and named scalar arrays of a legacy ASCII unstructured grid.
struct Vtk {
    points: Vec<[f64; 3]>,
    quads: Vec<[usize; 4]>,
    scalars: Vec<(String, Vec<f64>)>,
}

fn parse_vtk(text: &str) -> Vtk {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# vtk DataFile"));
    lines.next();
    assert_eq!(lines.next(), Some("ASCII"));
    assert_eq!(lines.next(), Some("DATASET UNSTRUCTURED_GRID"));
    let mut out = Vtk { points: Vec::new(), quads: Vec::new(), scalars: Vec::new() };
    let mut n_points = 0;
    while let Some(line) = lines.next() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.first().copied() {
            Some("POINTS") => {
                n_points = words[1].parse().unwrap();
                for _ in 0..n_points {
                    let v: Vec<f64> = lines.next().unwrap().split_whitespace().map(|w| w.parse().unwrap()).collect();
                    out.points.push([v[0], v[1], v[2]]);
                }
            }
            Some("CELLS") => {
                let n: usize = words[1].parse().unwrap();
                for _ in 0..n {
                    let v: Vec<usize> = lines.next().unwrap().split_whitespace().map(|w| w.parse().unwrap()).collect();
                    assert_eq!(v[0], 4);
                    out.quads.push([v[1], v[2], v[3], v[4]]);
                }
            }
            Some("CELL_TYPES") => {
                let n: usize = words[1].parse().unwrap();
                for _ in 0..n {
                    assert_eq!(lines.next(), Some("9"));
                }
            }
            Some("SCALARS") => {
                assert_eq!(lines.next(), Some("LOOKUP_TABLE default"));
                let vals = (0..n_points).map(|_| lines.next().unwrap().parse().unwrap()).collect();
                out.scalars.push((words[1].to_owned(), vals));
            }
            _ => {}
        }
    }
    out
}

fn space(nx: usize, ny: usize) -> Arc<DgSpace> {
    Arc::new(DgSpace::new(Arc::new(Mesh::rectangle(Rect::new(0.0, 3.0, 0.0, 1.0), nx, ny, &[Side::Left]).unwrap()), 2, 3).unwrap())
}

#[test]
fn single_cell_has_nine_points_and_four_quads() {
    let sp = space(1, 1);
    let y = sp.interpolate(|x| [x[0], x[1], 0.0], BoundaryData::clamped_flat());
    let vtk = parse_vtk(&vtk_string(&y, &sp));
    assert_eq!(vtk.points.len(), 9);
    assert_eq!(vtk.quads.len(), 4);
    assert!(vtk.points.iter().all(|p| p[2] == 0.0));
    // Each sub-quad has positive area in the undeformed plane.
    for q in &vtk.quads {
        let [a, b, _, d] = q.map(|i| vtk.points[i]);
        let area = (b[0] - a[0]) * (d[1] - a[1]) - (b[1] - a[1]) * (d[0] - a[0]);
        assert!(area > 0.0);
    }
}

#[test]
fn round_trip_reproduces_deformed_nodes() {
    let sp = space(3, 2);
    let y = sp.interpolate(cylinder, BoundaryData::homogeneous());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cyl.vtk");
    emit_vtk(&y, &sp, &path).unwrap();
    let vtk = parse_vtk(&std::fs::read_to_string(&path).unwrap());

    let expected: Vec<[f64; 3]> = (0..sp.n_cells()).flat_map(|c| sp.node_points(c)).map(cylinder).collect();
    assert_eq!(vtk.points.len(), expected.len());
    for (p, q) in vtk.points.iter().zip(&expected) {
        for c in 0..3 {
            assert!((p[c] - q[c]).abs() <= 1e-12, "{p:?} vs {q:?}");
        }
    }
    let height = &vtk.scalars.iter().find(|(n, _)| n == "height").unwrap().1;
    assert!(height.iter().zip(&expected).all(|(h, q)| (h - q[2]).abs() <= 1e-12));
    assert!(vtk.scalars.iter().any(|(n, _)| n == "displacement"));
}

#[test]
fn unloaded_custom_run_writes_artifacts_and_takes_no_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_json(&format!(
        r#"{{"experiment": "custom", "output": {{"directory": {:?}}}}}"#,
        dir.path().to_str().unwrap()
    ))
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.trace.iterations(), 0);
    for file in ["trace.json", "final.vtk", "table.csv"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let trace: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["steps"].as_array().unwrap().len(), 0);
}

#[test]
fn vertical_load_run_writes_diagonal_profile() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset(Experiment::VerticalLoad);
    cfg.mesh.nx = 4;
    cfg.mesh.ny = 4;
    cfg.flow.max_steps = 5;
    cfg.output.directory = dir.path().to_path_buf();
    cfg.output.vtk_every = 2;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.trace.iterations(), 5);
    let diag = std::fs::read_to_string(dir.path().join("diagonal.csv")).unwrap();
    assert_eq!(diag.lines().count(), 102);
    assert!(dir.path().join("step_00002.vtk").exists());
    assert!(dir.path().join("step_00004.vtk").exists());
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn single_level_convergence_has_one_row_without_rate() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::preset(Experiment::VerticalLoad);
    cfg.mesh.nx = 2;
    cfg.mesh.ny = 2;
    cfg.flow.max_steps = 2;
    cfg.output.directory = dir.path().to_path_buf();
    let rows = run_convergence(&cfg, 1).unwrap();
    assert!(matches!(rows.as_slice(), [LevelResult::Ok(_)]));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].ends_with(','));
}
