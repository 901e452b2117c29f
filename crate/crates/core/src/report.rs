//! Run driver and output files.
//!
//! A run directory holds
//! - `metrics.csv`: one row per iteration, columns `iteration, objective,
//!   violation_1..violation_m, step_size, relative_change, projection_path,
//!   projection_iters, fea_seconds, projection_seconds`
//! - `run.json`: final objective and violations, wall times, config echo
//! - `snapshot_NNNN.*` at log-spaced iterations and `final.*`
//!
//! Density images are binary P5 PGM, one byte per element in element order
//! (`e = iy·nx + ix`, so the first image row is `iy = 0`), with
//! `byte = floor(255·clamp(ρ, 0, 1))`. Multi-material fields are written one
//! file per material (`_m1`, `_m2`, ...) plus an argmax `_composite`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{OptimizerKind, RunConfig};
use crate::error::{Error, Result};
use crate::optimizer::{DesignProblem, IterationRecord, OcOptimizer, PgdOptimizer, Stopwatch};
use crate::problems::Problem;

pub fn metrics_header(m: usize) -> String {
    let mut cols = vec!["iteration".to_string(), "objective".to_string()];
    cols.extend((1..=m).map(|j| format!("violation_{j}")));
    cols.extend(
        ["step_size", "relative_change", "projection_path", "projection_iters", "fea_seconds", "projection_seconds"]
            .map(String::from),
    );
    cols.join(",")
}

pub fn metrics_row(r: &IterationRecord) -> String {
    let mut cols = vec![r.iteration.to_string(), r.objective.to_string()];
    cols.extend(r.violations.iter().map(f64::to_string));
    cols.extend([
        r.step_size.to_string(),
        r.relative_change.to_string(),
        r.projection_path.clone(),
        r.projection_iters.to_string(),
        r.fea_seconds.to_string(),
        r.projection_seconds.to_string(),
    ]);
    cols.join(",")
}

/// Iterations `ceil(10^(i·log₁₀K/4))` for `i = 0..4`, deduplicated.
pub fn snapshot_iterations(k_max: usize) -> Vec<usize> {
    if k_max == 0 {
        return vec![];
    }
    let top = (k_max as f64).log10();
    let mut out: Vec<usize> = (0..5)
        .map(|i| {
            // Guard against 10^log10(K) landing a hair above K.
            let v = 10f64.powf(top * i as f64 / 4.0);
            ((v - 1e-9).ceil() as usize).clamp(1, k_max)
        })
        .collect();
    out.dedup();
    out
}

pub fn quantize(rho: f64) -> u8 {
    (255.0 * rho.clamp(0.0, 1.0)).floor() as u8
}

pub fn pgm_bytes(field: &[f64], nx: usize, ny: usize) -> Result<Vec<u8>> {
    check_field(field, nx, ny)?;
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    out.extend(field.iter().map(|&r| quantize(r)));
    Ok(out)
}

/// Header line `nx,ny`, then `ny` lines of `nx` values.
pub fn csv_text(field: &[f64], nx: usize, ny: usize) -> Result<String> {
    check_field(field, nx, ny)?;
    let mut out = format!("{nx},{ny}\n");
    for row in field.chunks(nx) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out += &line.join(",");
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_csv(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |what: String| Error::Domain(format!("density csv: {what}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let (nx, ny) = header
        .split_once(',')
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
        .ok_or_else(|| bad(format!("bad header {header:?}")))?;
    let mut field = Vec::with_capacity(nx * ny);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        for v in line.split(',') {
            field.push(v.trim().parse().map_err(|_| bad(format!("bad value {v:?}")))?);
        }
    }
    check_field(&field, nx, ny)?;
    Ok((nx, ny, field))
}

pub fn import_csv(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    parse_csv(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn check_field(field: &[f64], nx: usize, ny: usize) -> Result<()> {
    if field.len() != nx * ny {
        return Err(Error::Domain(format!("field has {} values for a {nx}×{ny} grid", field.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityFormat {
    Csv,
    Pgm,
}

impl DensityFormat {
    fn extension(self) -> &'static str {
        match self {
            DensityFormat::Csv => "csv",
            DensityFormat::Pgm => "pgm",
        }
    }
}

/// Argmax material per element, drawn at `255·(K − k)/K` scaled by that
/// material's density, so the stiffest material is brightest and void is black.
pub fn composite(field: &[f64], n: usize, channels: usize) -> Vec<f64> {
    (0..n)
        .map(|e| {
            let (k, v) = (0..channels)
                .map(|k| (k, field[k * n + e]))
                .fold((0, f64::MIN), |best, c| if c.1 > best.1 { c } else { best });
            v.clamp(0.0, 1.0) * (channels - k) as f64 / channels as f64
        })
        .collect()
}

/// Writes `stem.ext`, or per-channel `stem_mK.ext` plus `stem_composite.ext`
/// for multi-channel fields. Returns the paths written.
pub fn export_density(
    field: &[f64],
    nx: usize,
    ny: usize,
    dir: &Path,
    stem: &str,
    format: DensityFormat,
) -> Result<Vec<PathBuf>> {
    let n = nx * ny;
    if n == 0 || field.len() % n != 0 {
        return Err(Error::Domain(format!("field has {} values for a {nx}×{ny} grid", field.len())));
    }
    let channels = field.len() / n;
    let mut outputs: Vec<(String, Vec<f64>)> = Vec::new();
    if channels == 1 {
        outputs.push((stem.to_string(), field.to_vec()));
    } else {
        for k in 0..channels {
            outputs.push((format!("{stem}_m{}", k + 1), field[k * n..(k + 1) * n].to_vec()));
        }
        outputs.push((format!("{stem}_composite"), composite(field, n, channels)));
    }
    let mut written = Vec::new();
    for (name, values) in outputs {
        let path = dir.join(format!("{name}.{}", format.extension()));
        let bytes = match format {
            DensityFormat::Pgm => pgm_bytes(&values, nx, ny)?,
            DensityFormat::Csv => csv_text(&values, nx, ny)?.into_bytes(),
        };
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Serialize)]
pub struct WallTimes {
    pub total_seconds: f64,
    pub fea_seconds: f64,
    pub projection_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub status: String,
    pub error: Option<String>,
    pub iterations: usize,
    pub stopped_early: bool,
    /// Objective and violations at the final design.
    pub final_objective: Option<f64>,
    pub final_violations: Vec<f64>,
    pub wall_times: WallTimes,
    pub snapshot_iterations: Vec<usize>,
    pub config: RunConfig,
}

enum Driver<'a> {
    Pgd(PgdOptimizer<'a, Problem>),
    Oc(OcOptimizer<'a, Problem>),
}

impl Driver<'_> {
    fn is_finished(&self) -> bool {
        match self {
            Driver::Pgd(o) => o.is_finished(),
            Driver::Oc(o) => o.is_finished(),
        }
    }

    fn step(&mut self) -> Result<IterationRecord> {
        match self {
            Driver::Pgd(o) => o.step(),
            Driver::Oc(o) => o.step(),
        }
    }

    fn design(&self) -> &[f64] {
        match self {
            Driver::Pgd(o) => o.design(),
            Driver::Oc(o) => o.design(),
        }
    }

    fn stopped_early(&self) -> bool {
        matches!(self, Driver::Pgd(o) if o.stopped_early())
    }
}

/// Runs the configured benchmark and writes every output file. On an
/// optimizer error the metrics written so far are kept, `run.json` records
/// the failure, and the error is returned.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let problem = config.build_problem()?;
    let clock = Stopwatch::start(true);

    let metrics_path = dir.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);
    let write_line = |w: &mut BufWriter<File>, line: String| -> Result<()> {
        writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(&metrics_path, e))
    };
    write_line(&mut metrics, metrics_header(problem.constraint_count()))?;

    let snapshots = snapshot_iterations(config.pgd.k_max);
    let write_field = |field: &[f64], stem: &str| -> Result<()> {
        let (nx, ny) = (config.nx, config.ny);
        if config.snapshot_format.pgm() {
            export_density(field, nx, ny, dir, stem, DensityFormat::Pgm)?;
        }
        if config.snapshot_format.csv() {
            export_density(field, nx, ny, dir, stem, DensityFormat::Csv)?;
        }
        Ok(())
    };

    let mut summary = RunSummary {
        status: "completed".into(),
        error: None,
        iterations: 0,
        stopped_early: false,
        final_objective: None,
        final_violations: vec![],
        wall_times: WallTimes {
            total_seconds: 0.0,
            fea_seconds: 0.0,
            projection_seconds: 0.0,
        },
        snapshot_iterations: vec![],
        config: config.clone(),
    };

    let outcome = (|| -> Result<()> {
        let mut driver = match config.optimizer {
            OptimizerKind::Pgd => Driver::Pgd(PgdOptimizer::new(&problem, config.pgd)?),
            OptimizerKind::Oc => Driver::Oc(OcOptimizer::new(&problem, config.oc)?),
        };
        while !driver.is_finished() {
            let record = driver.step()?;
            summary.iterations += 1;
            summary.wall_times.fea_seconds += record.fea_seconds;
            summary.wall_times.projection_seconds += record.projection_seconds;
            write_line(&mut metrics, metrics_row(&record))?;
            if snapshots.contains(&summary.iterations) {
                write_field(driver.design(), &format!("snapshot_{:04}", summary.iterations))?;
                summary.snapshot_iterations.push(summary.iterations);
            }
            if driver.stopped_early() {
                break;
            }
        }
        summary.stopped_early = driver.stopped_early();
        write_field(driver.design(), "final")?;
        let last = problem.evaluate(driver.design())?;
        summary.final_objective = Some(last.objective);
        summary.final_violations = last.constraint_values.iter().map(|&g| g.max(0.0)).collect();
        Ok(())
    })();

    summary.wall_times.total_seconds = clock.seconds();
    if let Err(e) = &outcome {
        summary.status = "failed".into();
        summary.error = Some(e.to_string());
    }
    let json_path = dir.join("run.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Numerical(e.to_string()))?;
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;
    outcome.map(|_| summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_matches_frozen_columns() {
        assert_eq!(
            metrics_header(2),
            "iteration,objective,violation_1,violation_2,step_size,relative_change,projection_path,\
             projection_iters,fea_seconds,projection_seconds"
        );
    }

    #[test]
    fn log_spaced_snapshots() {
        assert_eq!(snapshot_iterations(300), vec![1, 5, 18, 73, 300]);
        assert_eq!(snapshot_iterations(1), vec![1]);
        assert_eq!(snapshot_iterations(10), vec![1, 2, 4, 6, 10]);
        assert_eq!(snapshot_iterations(100), vec![1, 4, 10, 32, 100]);
        assert!(snapshot_iterations(0).is_empty());
    }

    #[test]
    fn pgm_quantization_example() {
        let bytes = pgm_bytes(&[0.0, 1.0, 0.5, 0.25], 2, 2).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 255, 127, 63]);
    }

    #[test]
    fn uniform_solid_is_white() {
        let bytes = pgm_bytes(&[1.0; 12], 4, 3).unwrap();
        assert!(bytes[bytes.len() - 12..].iter().all(|&b| b == 255));
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        assert_eq!(quantize(-0.1), 0);
        assert_eq!(quantize(1.2), 255);
    }

    #[test]
    fn composite_prefers_stiffest_on_ties() {
        // Two materials, three elements.
        let field = [0.9, 0.2, 0.0, 0.1, 0.8, 0.0];
        let c = composite(&field, 3, 2);
        assert_eq!(c, vec![0.9, 0.4, 0.0]);
    }

    #[test]
    fn export_writes_per_channel_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = export_density(&[0.5; 8], 2, 2, dir.path(), "x", DensityFormat::Pgm).unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(names, ["x_m1.pgm", "x_m2.pgm", "x_composite.pgm"]);
        assert!(export_density(&[0.5; 7], 2, 2, dir.path(), "x", DensityFormat::Pgm).is_err());
    }

    #[test]
    fn csv_rejects_wrong_count() {
        assert!(parse_csv("2,2\n0,1\n0.5\n").is_err());
        assert!(parse_csv("").is_err());
        assert!(parse_csv("two,2\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip(values in proptest::collection::vec(0.0f64..1.0, 12)) {
            let text = csv_text(&values, 4, 3).unwrap();
            let (nx, ny, back) = parse_csv(&text).unwrap();
            prop_assert_eq!((nx, ny), (4, 3));
            for (a, b) in values.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn quantization_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize(lo) <= quantize(hi));
        }
    }
}
