use std::path::Path;

use topopt::config::RunConfig;
use topopt::report::{export_density, import_csv, run, DensityFormat};

fn config(text: &str, dir: &Path) -> RunConfig {
    let mut c = RunConfig::parse_str(text).unwrap();
    c.output_dir = dir.to_path_buf();
    c
}

fn files(dir: &Path, prefix: &str) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with(prefix))
        .collect();
    names.sort();
    names
}

#[test]
fn coarse_default_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run(&config("", dir.path())).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 301);
    assert!(lines[0].starts_with("iteration,objective,violation_1,step_size"));
    assert!(lines[1].starts_with("0,"));
    assert!(lines[300].starts_with("299,"));
    assert_eq!(
        files(dir.path(), "snapshot_"),
        ["snapshot_0001.pgm", "snapshot_0005.pgm", "snapshot_0018.pgm", "snapshot_0073.pgm", "snapshot_0300.pgm"]
    );
    assert!(dir.path().join("final.pgm").exists());
    assert_eq!(summary.snapshot_iterations.len() + 1, 6);
    assert!(summary.final_violations[0] <= 1e-6);

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(json["status"], "completed");
    assert_eq!(json["iterations"], 300);
    assert_eq!(json["config"]["problem"], "min_compliance");
    assert!(json["final_objective"].as_f64().unwrap() > 0.0);
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let text = "problem = com_constrained\nnx = 32\nny = 16\nk_max = 60";
    run(&config(text, a.path())).unwrap();
    run(&config(text, b.path())).unwrap();
    for name in ["metrics.csv", "final.pgm", "snapshot_0060.pgm"] {
        assert_eq!(
            std::fs::read(a.path().join(name)).unwrap(),
            std::fs::read(b.path().join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn multi_material_run_writes_channel_images() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("problem = multi_material\nnx = 16\nny = 8\nk_max = 10\nsnapshot_format = both", dir.path());
    let summary = run(&c).unwrap();
    assert!(summary.final_violations.iter().all(|&v| v <= 1e-6));
    let finals = files(dir.path(), "final");
    assert_eq!(finals.len(), 10);
    assert!(finals.contains(&"final_composite.pgm".to_string()));
    let header = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(header.lines().next().unwrap().contains("violation_4,step_size"));
    let (nx, ny, field) = import_csv(&dir.path().join("final_m2.csv")).unwrap();
    assert_eq!((nx, ny, field.len()), (16, 8, 128));
}

#[test]
fn oc_run_uses_bisection_path() {
    let dir = tempfile::tempdir().unwrap();
    run(&config("optimizer = oc\nnx = 16\nny = 8\nk_max = 20", dir.path())).unwrap();
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|l| l.contains(",oc_bisection,")));
}

#[test]
fn min_volume_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run(&config("problem = min_volume\nnx = 16\nny = 8\nk_max = 40", dir.path())).unwrap();
    assert_eq!(summary.iterations, 40);
    assert!(summary.final_objective.unwrap() < 1.0);
}

#[test]
fn early_stop_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run(&config("nx = 16\nny = 8\ntol = 1e-2", dir.path())).unwrap();
    assert!(summary.stopped_early);
    assert!(summary.iterations < 300);
}

#[test]
fn csv_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let field: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let paths = export_density(&field, 6, 4, dir.path(), "field", DensityFormat::Csv).unwrap();
    let (nx, ny, back) = import_csv(&paths[0]).unwrap();
    assert_eq!((nx, ny), (6, 4));
    for (a, b) in field.iter().zip(&back) {
        assert!((a - b).abs() <= 1e-9);
    }
}

#[test]
fn unwritable_output_dir_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let c = config("nx = 4\nny = 2\nk_max = 1", &blocker.join("out"));
    assert!(matches!(run(&c), Err(topopt::Error::Io { .. })));
}
