//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration; unknown keys are
//! rejected. [`KEYS`] is the full reference and also drives the CLI flags.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fea::{BoundaryConditions, MaterialModel, SolverKind, StructuredGrid};
use crate::optimizer::{OcSettings, PgdSettings};
use crate::problems::{Problem, ProblemKind, ProblemSpec};

/// Environment variable that overrides `output_dir` from a file.
pub const OUTPUT_DIR_ENV: &str = "TOPOPT_OUTPUT_DIR";

pub struct KeySpec {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($($name:literal = $default:literal : $help:literal,)*) => {
        pub const KEYS: &[KeySpec] = &[$(KeySpec { name: $name, default: $default, help: $help },)*];
    };
}

keys! {
    "problem" = "min_compliance": "min_compliance, min_volume, multi_material or com_constrained",
    "resolution" = "coarse": "grid preset: coarse (128x64), medium (256x128) or fine (512x256)",
    "nx" = "": "elements along x; overrides the preset together with ny",
    "ny" = "": "elements along y; overrides the preset together with nx",
    "optimizer" = "pgd": "pgd or oc (oc needs min_compliance)",
    "volume_fraction" = "0.2": "target volume fraction",
    "compliance_limit" = "150": "compliance limit for min_volume",
    "material_fractions" = "0.05,0.05,0.05,0.05": "per-material volume fractions",
    "young_moduli" = "1,0.5,0.25,0.125": "per-material moduli for multi_material",
    "com_target" = "0.25,0.25": "target center of mass (x,y)",
    "com_radius" = "0.01": "allowed squared distance from the target center of mass",
    "load" = "1": "magnitude of the downward load at mid-right",
    "poisson" = "0.3": "Poisson ratio",
    "penalty" = "3": "SIMP penalty exponent",
    "filter_radius" = "1.5": "density filter radius in elements",
    "solver" = "auto": "linear solver: auto, dense, banded or pcg",
    "alpha_max" = "100": "largest step size",
    "alpha_fallback" = "0.2": "largest per-entry change of a fallback step",
    "t_warmup" = "50": "iterations before the violation fallback can engage",
    "omega" = "1": "step relaxation in (0, 1]",
    "eps_alpha" = "1e-6": "curvature threshold of the spectral step",
    "tol" = "0": "relative-change stop; 0 runs every iteration",
    "k_max" = "300": "iteration count",
    "c" = "1e12": "regularization weight of the projection",
    "tol_b" = "1e-8": "bisection interval tolerance",
    "tol_n" = "1e-6": "Newton residual tolerance and violation threshold",
    "newton_max_iter" = "100": "Newton iteration cap per projection",
    "fallback" = "true": "enable the violation fallback",
    "force_newton" = "false": "send every projection through the Newton solver",
    "oc_eta" = "0.5": "OC damping exponent",
    "oc_move_limit" = "0.2": "OC move limit",
    "seed" = "0": "seed for randomized helpers; runs themselves are deterministic",
    "timings" = "false": "record wall times in metrics.csv (makes it non-reproducible)",
    "snapshot_format" = "pgm": "pgm, csv or both",
    "output_dir" = "topopt-out": "output directory",
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Pgd,
    Oc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    Pgm,
    Csv,
    Both,
}

impl SnapshotFormat {
    pub fn pgm(self) -> bool {
        matches!(self, SnapshotFormat::Pgm | SnapshotFormat::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, SnapshotFormat::Csv | SnapshotFormat::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub resolution: String,
    pub nx: usize,
    pub ny: usize,
    pub optimizer: OptimizerKind,
    pub volume_fraction: f64,
    pub compliance_limit: f64,
    pub material_fractions: Vec<f64>,
    pub young_moduli: Vec<f64>,
    pub com_target: [f64; 2],
    pub com_radius: f64,
    pub load: f64,
    pub poisson: f64,
    pub penalty: f64,
    pub filter_radius: f64,
    pub solver: SolverKind,
    pub pgd: PgdSettings,
    pub oc: OcSettings,
    pub seed: u64,
    pub timings: bool,
    pub snapshot_format: SnapshotFormat,
    pub output_dir: PathBuf,
    #[serde(skip)]
    explicit_nx: Option<usize>,
    #[serde(skip)]
    explicit_ny: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = RunConfig {
            problem: ProblemKind::MinCompliance,
            resolution: String::new(),
            nx: 0,
            ny: 0,
            optimizer: OptimizerKind::Pgd,
            volume_fraction: 0.0,
            compliance_limit: 0.0,
            material_fractions: vec![],
            young_moduli: vec![],
            com_target: [0.0; 2],
            com_radius: 0.0,
            load: 0.0,
            poisson: 0.0,
            penalty: 0.0,
            filter_radius: 0.0,
            solver: SolverKind::Auto,
            pgd: PgdSettings::default(),
            oc: OcSettings::default(),
            seed: 0,
            timings: false,
            snapshot_format: SnapshotFormat::Pgm,
            output_dir: PathBuf::new(),
            explicit_nx: None,
            explicit_ny: None,
        };
        for k in KEYS {
            cfg.set(k.name, k.default).expect("key table defaults parse");
        }
        cfg
    }
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?} as a number")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got {value:?}"))),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| number(key, v.trim())).collect()
}

/// Parameter names coincide with config keys up to case.
fn as_config_error(e: Error) -> Error {
    match e {
        Error::Parameter { name, reason } => Error::config(name.to_lowercase(), reason),
        other => other,
    }
}

pub fn preset(name: &str) -> Option<(usize, usize)> {
    match name {
        "coarse" => Some((128, 64)),
        "medium" => Some((256, 128)),
        "fine" => Some((512, 256)),
        _ => None,
    }
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults, then validates.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {} is not of the form key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Sets one key from its text form. Call [`RunConfig::validate`] after the
    /// last change.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pgd;
        match key {
            "problem" => {
                self.problem = ProblemKind::parse(value)
                    .ok_or_else(|| Error::config(key, format!("unknown problem {value:?}")))?
            }
            "resolution" => {
                let (nx, ny) = preset(value).ok_or_else(|| Error::config(key, format!("unknown preset {value:?}")))?;
                self.resolution = value.to_string();
                self.nx = nx;
                self.ny = ny;
            }
            "nx" => self.explicit_nx = if value.is_empty() { None } else { Some(number(key, value)?) },
            "ny" => self.explicit_ny = if value.is_empty() { None } else { Some(number(key, value)?) },
            "optimizer" => {
                self.optimizer = match value {
                    "pgd" => OptimizerKind::Pgd,
                    "oc" => OptimizerKind::Oc,
                    _ => return Err(Error::config(key, format!("unknown optimizer {value:?}"))),
                }
            }
            "volume_fraction" => self.volume_fraction = number(key, value)?,
            "compliance_limit" => self.compliance_limit = number(key, value)?,
            "material_fractions" => self.material_fractions = list(key, value)?,
            "young_moduli" => self.young_moduli = list(key, value)?,
            "com_target" => {
                let v = list(key, value)?;
                if v.len() != 2 {
                    return Err(Error::config(key, "expected two comma-separated values"));
                }
                self.com_target = [v[0], v[1]];
            }
            "com_radius" => self.com_radius = number(key, value)?,
            "load" => self.load = number(key, value)?,
            "poisson" => self.poisson = number(key, value)?,
            "penalty" => self.penalty = number(key, value)?,
            "filter_radius" => self.filter_radius = number(key, value)?,
            "solver" => {
                self.solver = match value {
                    "auto" => SolverKind::Auto,
                    "dense" => SolverKind::Dense,
                    "banded" => SolverKind::Banded,
                    "pcg" => SolverKind::Pcg,
                    _ => return Err(Error::config(key, format!("unknown solver {value:?}"))),
                }
            }
            "alpha_max" => p.alpha_max = number(key, value)?,
            "alpha_fallback" => p.alpha_fallback = number(key, value)?,
            "t_warmup" => p.t_warmup = number(key, value)?,
            "omega" => p.omega = number(key, value)?,
            "eps_alpha" => p.eps_alpha = number(key, value)?,
            "tol" => p.tol = number(key, value)?,
            "k_max" => {
                p.k_max = number(key, value)?;
                self.oc.k_max = p.k_max;
            }
            "c" => p.c = number(key, value)?,
            "tol_b" => p.tol_b = number(key, value)?,
            "tol_n" => p.tol_n = number(key, value)?,
            "newton_max_iter" => p.newton_max_iter = number(key, value)?,
            "fallback" => p.fallback = boolean(key, value)?,
            "force_newton" => p.force_newton = boolean(key, value)?,
            "oc_eta" => self.oc.eta = number(key, value)?,
            "oc_move_limit" => self.oc.move_limit = number(key, value)?,
            "seed" => self.seed = number(key, value)?,
            "timings" => {
                self.timings = boolean(key, value)?;
                p.record_timings = self.timings;
                self.oc.record_timings = self.timings;
            }
            "snapshot_format" => {
                self.snapshot_format = match value {
                    "pgm" => SnapshotFormat::Pgm,
                    "csv" => SnapshotFormat::Csv,
                    "both" => SnapshotFormat::Both,
                    _ => return Err(Error::config(key, format!("unknown format {value:?}"))),
                }
            }
            "output_dir" => {
                if value.is_empty() {
                    return Err(Error::config(key, "must not be empty"));
                }
                self.output_dir = PathBuf::from(value);
            }
            _ => return Err(Error::config(key, "unknown key")),
        }
        if let (Some(nx), Some(ny)) = (self.explicit_nx, self.explicit_ny) {
            self.nx = nx;
            self.ny = ny;
        }
        Ok(())
    }

    /// Applies [`OUTPUT_DIR_ENV`] when it is set and non-empty.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.explicit_nx.is_some() != self.explicit_ny.is_some() {
            let missing = if self.explicit_nx.is_some() { "ny" } else { "nx" };
            return Err(Error::config(missing, "nx and ny must be given together"));
        }
        if self.nx == 0 || self.ny == 0 {
            let key = if self.nx == 0 { "nx" } else { "ny" };
            return Err(Error::config(key, "resolution must be positive"));
        }
        if self.optimizer == OptimizerKind::Oc && self.problem != ProblemKind::MinCompliance {
            return Err(Error::config(
                "optimizer",
                format!("oc supports only min_compliance, not {}", self.problem.as_str()),
            ));
        }
        if self.problem == ProblemKind::MultiMaterial && self.material_fractions.len() != self.young_moduli.len() {
            return Err(Error::config(
                "material_fractions",
                format!("{} fractions for {} moduli", self.material_fractions.len(), self.young_moduli.len()),
            ));
        }
        if !(self.oc.eta > 0.0) {
            return Err(Error::config("oc_eta", "must be positive"));
        }
        if !(self.oc.move_limit > 0.0) {
            return Err(Error::config("oc_move_limit", "must be positive"));
        }
        self.pgd.validate().map_err(as_config_error)?;
        self.problem_spec().map(|_| ()).map_err(as_config_error)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let grid = StructuredGrid::unit_width(self.nx, self.ny)?;
        let moduli = match self.problem {
            ProblemKind::MultiMaterial => self.young_moduli.clone(),
            _ => vec![1.0],
        };
        let spec = ProblemSpec {
            kind: self.problem,
            bc: BoundaryConditions::cantilever(&grid, self.load)?,
            grid,
            material: MaterialModel::with_default_floor(moduli, self.poisson, self.penalty)?,
            targets: crate::problems::Targets {
                volume_fraction: self.volume_fraction,
                compliance_limit: self.compliance_limit,
                material_fractions: self.material_fractions.clone(),
                com_target: self.com_target,
                com_radius: self.com_radius,
            },
            filter_radius: self.filter_radius,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn build_problem(&self) -> Result<Problem> {
        Ok(Problem::new(self.problem_spec()?)?
            .with_solver(self.solver)
            .with_timings(self.timings))
    }
}
