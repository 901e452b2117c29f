//! Cantilever benchmark problems wired through the density filter and FEA.
//!
//! Constraint order per kind:
//! - `min_compliance`: `[mean(ρ̄) − V_f]`
//! - `min_volume`: `[c(ρ̄) − C_max]`
//! - `multi_material`: `[mean(ρ̄_j) − V_j]` for each material `j`
//! - `com_constrained`: `[mean(ρ̄) − V_f, ‖R(ρ̄) − R_t‖² − r_b]`
//!
//! `ρ̄ = Wρ` is the filtered field; the design box applies to raw `ρ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fea::{BoundaryConditions, FeaModel, MaterialModel, SolverKind, StructuredGrid};
use crate::filter::{build_filter, FilterKernel};
use crate::optimizer::{DesignProblem, Stopwatch};

pub use crate::optimizer::EvaluationBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    MinCompliance,
    MinVolume,
    MultiMaterial,
    ComConstrained,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [
        ProblemKind::MinCompliance,
        ProblemKind::MinVolume,
        ProblemKind::MultiMaterial,
        ProblemKind::ComConstrained,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemKind::MinCompliance => "min_compliance",
            ProblemKind::MinVolume => "min_volume",
            ProblemKind::MultiMaterial => "multi_material",
            ProblemKind::ComConstrained => "com_constrained",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub volume_fraction: f64,
    pub compliance_limit: f64,
    pub material_fractions: Vec<f64>,
    pub com_target: [f64; 2],
    pub com_radius: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Targets {
            volume_fraction: 0.2,
            compliance_limit: 150.0,
            material_fractions: vec![0.05; 4],
            com_target: [0.25, 0.25],
            com_radius: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub grid: StructuredGrid,
    pub bc: BoundaryConditions,
    pub material: MaterialModel,
    pub targets: Targets,
    pub filter_radius: f64,
}

impl ProblemSpec {
    /// Cantilever on an `nx × ny` grid one unit wide, unit load, `ν = 0.3`,
    /// penalty 3, filter radius 1.5 elements. Multi-material uses moduli
    /// 1, ½, ¼, ⅛; every other kind a single material with `E = 1`.
    pub fn cantilever(kind: ProblemKind, nx: usize, ny: usize) -> Result<Self> {
        let grid = StructuredGrid::unit_width(nx, ny)?;
        let moduli = match kind {
            ProblemKind::MultiMaterial => vec![1.0, 0.5, 0.25, 0.125],
            _ => vec![1.0],
        };
        Ok(ProblemSpec {
            kind,
            bc: BoundaryConditions::cantilever(&grid, 1.0)?,
            grid,
            material: MaterialModel::with_default_floor(moduli, 0.3, 3.0)?,
            targets: Targets::default(),
            filter_radius: 1.5,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.targets;
        let fraction = |name: &'static str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::parameter(name, format!("{v} must lie in (0, 1]")))
            }
        };
        match self.kind {
            ProblemKind::MinCompliance => fraction("volume_fraction", t.volume_fraction)?,
            ProblemKind::MinVolume => {
                if !(t.compliance_limit > 0.0 && t.compliance_limit.is_finite()) {
                    return Err(Error::parameter("compliance_limit", "must be positive"));
                }
            }
            ProblemKind::MultiMaterial => {
                let k = self.material.material_count();
                if k < 1 || t.material_fractions.len() != k {
                    return Err(Error::parameter(
                        "material_fractions",
                        format!("{} fractions for {k} materials", t.material_fractions.len()),
                    ));
                }
                for &v in &t.material_fractions {
                    fraction("material_fractions", v)?;
                }
            }
            ProblemKind::ComConstrained => {
                fraction("volume_fraction", t.volume_fraction)?;
                if !(t.com_radius > 0.0) {
                    return Err(Error::parameter("com_radius", "must be positive"));
                }
            }
        }
        if self.kind != ProblemKind::MultiMaterial && self.material.material_count() != 1 {
            return Err(Error::parameter("young_moduli", "single-material problem given several moduli"));
        }
        Ok(())
    }
}

/// A ready-to-evaluate problem: spec plus the prepared FEA model and filter.
#[derive(Debug, Clone)]
pub struct Problem {
    spec: ProblemSpec,
    fea: FeaModel,
    filter: FilterKernel,
    /// `Wᵀ1 / N`, the raw-space gradient of a mean filtered density.
    volume_grad: Vec<f64>,
    record_timings: bool,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let fea = FeaModel::new(spec.grid, spec.bc.clone(), spec.material.poisson)?;
        let filter = build_filter(&spec.grid, spec.filter_radius)?;
        let n = spec.grid.element_count() as f64;
        let volume_grad = filter.column_sums().into_iter().map(|s| s / n).collect();
        Ok(Problem {
            spec,
            fea,
            filter,
            volume_grad,
            record_timings: true,
        })
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.fea = self.fea.with_solver(solver);
        self
    }

    pub fn with_timings(mut self, enabled: bool) -> Self {
        self.record_timings = enabled;
        self
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn filter(&self) -> &FilterKernel {
        &self.filter
    }

    pub fn element_count(&self) -> usize {
        self.spec.grid.element_count()
    }

    pub fn channels(&self) -> usize {
        match self.spec.kind {
            ProblemKind::MultiMaterial => self.spec.material.material_count(),
            _ => 1,
        }
    }

    pub fn filtered(&self, rho: &[f64]) -> Result<Vec<f64>> {
        self.check_len(rho)?;
        self.filter.apply(rho)
    }

    fn check_len(&self, rho: &[f64]) -> Result<()> {
        let want = self.element_count() * self.channels();
        if rho.len() != want {
            return Err(Error::Domain(format!("design has {} entries, expected {want}", rho.len())));
        }
        Ok(())
    }

    /// Compliance and its raw-space gradient at the filtered design.
    fn compliance(&self, filtered: &[f64]) -> Result<(f64, Vec<f64>, f64)> {
        let clock = Stopwatch::start(self.record_timings);
        let eval = self.fea.compliance_and_gradient(filtered, &self.spec.material)?;
        let seconds = clock.seconds();
        Ok((eval.compliance, self.filter.chain_rule(&eval.gradient)?, seconds))
    }

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn eval_min_compliance(&self, rho: &[f64]) -> Result<EvaluationBundle> {
        let filtered = self.filtered(rho)?;
        let (c, grad, fea_seconds) = self.compliance(&filtered)?;
        Ok(EvaluationBundle {
            objective: c,
            objective_grad: grad,
            constraint_values: vec![Self::mean(&filtered) - self.spec.targets.volume_fraction],
            constraint_grads: vec![self.volume_grad.clone()],
            fea_seconds,
        })
    }

    pub fn eval_min_volume(&self, rho: &[f64]) -> Result<EvaluationBundle> {
        let filtered = self.filtered(rho)?;
        let (c, grad, fea_seconds) = self.compliance(&filtered)?;
        Ok(EvaluationBundle {
            objective: Self::mean(&filtered),
            objective_grad: self.volume_grad.clone(),
            constraint_values: vec![c - self.spec.targets.compliance_limit],
            constraint_grads: vec![grad],
            fea_seconds,
        })
    }

    pub fn eval_multi_material(&self, rho: &[f64]) -> Result<EvaluationBundle> {
        let filtered = self.filtered(rho)?;
        let (c, grad, fea_seconds) = self.compliance(&filtered)?;
        let n = self.element_count();
        let k = self.channels();
        let mut values = Vec::with_capacity(k);
        let mut grads = Vec::with_capacity(k);
        for j in 0..k {
            values.push(Self::mean(&filtered[j * n..(j + 1) * n]) - self.spec.targets.material_fractions[j]);
            let mut g = vec![0.0; n * k];
            g[j * n..(j + 1) * n].copy_from_slice(&self.volume_grad);
            grads.push(g);
        }
        Ok(EvaluationBundle {
            objective: c,
            objective_grad: grad,
            constraint_values: values,
            constraint_grads: grads,
            fea_seconds,
        })
    }

    pub fn eval_com_constrained(&self, rho: &[f64]) -> Result<EvaluationBundle> {
        let filtered = self.filtered(rho)?;
        let (c, grad, fea_seconds) = self.compliance(&filtered)?;
        let (g2, g2_filtered) = self.com_constraint(&filtered)?;
        Ok(EvaluationBundle {
            objective: c,
            objective_grad: grad,
            constraint_values: vec![Self::mean(&filtered) - self.spec.targets.volume_fraction, g2],
            constraint_grads: vec![self.volume_grad.clone(), self.filter.chain_rule(&g2_filtered)?],
            fea_seconds,
        })
    }

    /// Density-weighted centroid of the filtered field.
    pub fn center_of_mass(&self, filtered: &[f64]) -> Result<[f64; 2]> {
        let total: f64 = filtered.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("center of mass of an all-void design is undefined".into()));
        }
        let total = total.max(1e-12);
        let mut r = [0.0; 2];
        for (e, &w) in filtered.iter().enumerate() {
            let x = self.spec.grid.centroid(e);
            r[0] += w * x[0];
            r[1] += w * x[1];
        }
        Ok([r[0] / total, r[1] / total])
    }

    /// `‖R − R_t‖² − r_b` and its gradient with respect to the filtered field.
    fn com_constraint(&self, filtered: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.center_of_mass(filtered)?;
        let total = filtered.iter().sum::<f64>().max(1e-12);
        let t = self.spec.targets.com_target;
        let d = [r[0] - t[0], r[1] - t[1]];
        let value = d[0] * d[0] + d[1] * d[1] - self.spec.targets.com_radius;
        let grad = (0..filtered.len())
            .map(|e| {
                let x = self.spec.grid.centroid(e);
                2.0 * (d[0] * (x[0] - r[0]) + d[1] * (x[1] - r[1])) / total
            })
            .collect();
        Ok((value, grad))
    }
}

impl DesignProblem for Problem {
    fn design_len(&self) -> usize {
        self.element_count() * self.channels()
    }

    fn constraint_count(&self) -> usize {
        match self.spec.kind {
            ProblemKind::MinCompliance | ProblemKind::MinVolume => 1,
            ProblemKind::MultiMaterial => self.channels(),
            ProblemKind::ComConstrained => 2,
        }
    }

    fn evaluate(&self, rho: &[f64]) -> Result<EvaluationBundle> {
        match self.spec.kind {
            ProblemKind::MinCompliance => self.eval_min_compliance(rho),
            ProblemKind::MinVolume => self.eval_min_volume(rho),
            ProblemKind::MultiMaterial => self.eval_multi_material(rho),
            ProblemKind::ComConstrained => self.eval_com_constrained(rho),
        }
    }

    fn initial_design(&self) -> Vec<f64> {
        let n = self.element_count();
        match self.spec.kind {
            ProblemKind::MultiMaterial => self
                .spec
                .targets
                .material_fractions
                .iter()
                .flat_map(|&v| std::iter::repeat(v).take(n))
                .collect(),
            _ => vec![1.0; n],
        }
    }

    fn independence_partition(&self) -> Option<Vec<Vec<usize>>> {
        (self.spec.kind == ProblemKind::MultiMaterial).then(|| {
            let n = self.element_count();
            (0..self.channels()).map(|j| (j * n..(j + 1) * n).collect()).collect()
        })
    }

    fn oc_volume_target(&self) -> Option<f64> {
        (self.spec.kind == ProblemKind::MinCompliance).then_some(self.spec.targets.volume_fraction)
    }
}
