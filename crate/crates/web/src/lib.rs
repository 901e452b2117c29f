//! Browser bindings: a stepping optimizer and a two-variable projection
//! playground. See `www/index.html`.

use topopt::optimizer::{pgd_step, DesignProblem, OptimizerState, PgdSettings};
use topopt::problems::{Problem, ProblemKind, ProblemSpec};
use topopt::projection::{project, Bounds, ConstraintLinearization, ProjectionPath, ProjectionSettings};
use wasm_bindgen::prelude::*;

/// Display colours per material, stiffest first.
const PALETTE: [[u8; 3]; 4] = [[20, 20, 20], [200, 60, 40], [40, 110, 200], [60, 160, 80]];

#[wasm_bindgen]
pub struct Demo {
    problem: Problem,
    state: OptimizerState,
    settings: PgdSettings,
    objective: f64,
    violations: Vec<f64>,
}

#[wasm_bindgen]
impl Demo {
    /// `kind` is one of `min_compliance`, `min_volume`, `multi_material`,
    /// `com_constrained`.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, nx: usize, ny: usize, volume_fraction: f64) -> Result<Demo, String> {
        let kind = ProblemKind::parse(kind).ok_or_else(|| format!("unknown problem {kind:?}"))?;
        let mut spec = ProblemSpec::cantilever(kind, nx, ny).map_err(|e| e.to_string())?;
        spec.targets.volume_fraction = volume_fraction;
        let problem = Problem::new(spec).map_err(|e| e.to_string())?.with_timings(false);
        let state = OptimizerState::new(problem.initial_design(), problem.constraint_count());
        Ok(Demo {
            problem,
            state,
            settings: PgdSettings {
                record_timings: false,
                ..Default::default()
            },
            objective: f64::NAN,
            violations: vec![],
        })
    }

    /// Runs `count` iterations and returns the objective of the last one.
    pub fn step(&mut self, count: usize) -> Result<f64, String> {
        for _ in 0..count {
            let r = pgd_step(&self.problem, &mut self.state, &self.settings).map_err(|e| e.to_string())?;
            self.objective = r.objective;
            self.violations = r.violations;
        }
        Ok(self.objective)
    }

    pub fn iteration(&self) -> usize {
        self.state.iteration
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn violations(&self) -> Vec<f64> {
        self.violations.clone()
    }

    pub fn width(&self) -> usize {
        self.problem.spec().grid.nx
    }

    pub fn height(&self) -> usize {
        self.problem.spec().grid.ny
    }

    /// RGBA pixels of the filtered design, top row first (`y` pointing up).
    pub fn rgba(&self) -> Vec<u8> {
        let (nx, ny) = (self.width(), self.height());
        let n = nx * ny;
        let field = self.problem.filtered(&self.state.rho).unwrap_or_else(|_| vec![0.0; self.state.rho.len()]);
        let channels = field.len() / n;
        let mut out = Vec::with_capacity(4 * n);
        for row in (0..ny).rev() {
            for col in 0..nx {
                let e = row * nx + col;
                let mut px = [255.0f64; 3];
                for k in 0..channels {
                    let rho = field[k * n + e].clamp(0.0, 1.0);
                    let colour = PALETTE[k % PALETTE.len()];
                    for c in 0..3 {
                        px[c] -= rho * (255.0 - colour[c] as f64);
                    }
                }
                out.extend(px.map(|v| v.clamp(0.0, 255.0) as u8));
                out.push(255);
            }
        }
        out
    }
}

/// Projects the point `(x, y)` onto the unit square intersected with the
/// half-planes `rows[2j]·ρ₁ + rows[2j+1]·ρ₂ ≤ rhs[j]`. Returns
/// `[ρ₁, ρ₂, path, iterations, residual]`, where path 0 is a single-row
/// bisection and 1 the Newton solver.
#[wasm_bindgen]
pub fn project_point(x: f64, y: f64, rows: Vec<f64>, rhs: Vec<f64>, c: f64) -> Result<Vec<f64>, String> {
    if rows.len() != 2 * rhs.len() {
        return Err(format!("{} coefficients for {} half-planes", rows.len(), rhs.len()));
    }
    let point = [x, y];
    let a: Vec<Vec<f64>> = rows.chunks(2).map(<[f64]>::to_vec).collect();
    let shifted: Vec<f64> = a.iter().zip(&rhs).map(|(r, b)| b - r[0] * x - r[1] * y).collect();
    let lin = ConstraintLinearization::from_halfspaces(a, shifted).map_err(|e| e.to_string())?;
    let settings = ProjectionSettings {
        c,
        ..Default::default()
    };
    let r = project(&point, &lin, Bounds::UNIT, &settings).map_err(|e| e.to_string())?;
    let q = r.apply(&point, Bounds::UNIT);
    let path = match r.path {
        ProjectionPath::Newton => 1.0,
        _ => 0.0,
    };
    Ok(vec![q[0], q[1], path, (r.newton_iters + r.binary_iters) as f64, r.residual])
}
