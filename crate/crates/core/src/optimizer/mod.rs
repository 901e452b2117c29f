//! Projected gradient descent over box-bounded designs with linearized
//! constraints, plus an optimality-criteria baseline.

mod oc;
mod pgd;
mod step;

use serde::{Deserialize, Serialize};

pub use oc::{oc_update, run_oc, OcOptimizer, OcSettings};
pub use pgd::{finish_step, pgd_step, plan_step, project_plan, run_pgd, PgdOptimizer, StepPlan};
pub use step::{cg_direction, fallback_step_size, spectral_step_size};

use crate::error::{Error, Result};
use crate::projection::{Bounds, ProjectionSettings};

/// Objective, constraints and their gradients at one design, all with respect
/// to the raw design variables. Constraints are normalized to `g_j(ρ) ≤ 0`
/// (or `= 0` for equality rows).
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationBundle {
    pub objective: f64,
    pub objective_grad: Vec<f64>,
    pub constraint_values: Vec<f64>,
    pub constraint_grads: Vec<Vec<f64>>,
    /// Wall time of the finite element solve; zero when timings are off.
    pub fea_seconds: f64,
}

/// A design problem as seen by the optimizers.
pub trait DesignProblem {
    fn design_len(&self) -> usize;

    fn constraint_count(&self) -> usize;

    fn evaluate(&self, rho: &[f64]) -> Result<EvaluationBundle>;

    fn initial_design(&self) -> Vec<f64>;

    fn bounds(&self) -> Bounds {
        Bounds::UNIT
    }

    /// Disjoint variable blocks, one per constraint, when every constraint
    /// depends only on its own block.
    fn independence_partition(&self) -> Option<Vec<Vec<usize>>> {
        None
    }

    fn is_equality(&self) -> Vec<bool> {
        vec![false; self.constraint_count()]
    }

    /// Target volume fraction when the problem is compliance minimization
    /// under one linear volume constraint, the setting the OC update needs.
    fn oc_volume_target(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdSettings {
    pub alpha_max: f64,
    pub alpha_fallback: f64,
    pub t_warmup: usize,
    pub omega: f64,
    pub eps_alpha: f64,
    /// Relative-change stop; 0 runs all `k_max` iterations.
    pub tol: f64,
    pub k_max: usize,
    pub c: f64,
    pub tol_b: f64,
    pub tol_n: f64,
    pub newton_max_iter: usize,
    /// Switch to the bounded fallback step when violation persists after warmup.
    pub fallback: bool,
    /// Route every projection through the general Newton solver.
    pub force_newton: bool,
    pub record_timings: bool,
}

impl Default for PgdSettings {
    fn default() -> Self {
        PgdSettings {
            alpha_max: 1e2,
            alpha_fallback: 0.2,
            t_warmup: 50,
            omega: 1.0,
            eps_alpha: 1e-6,
            tol: 0.0,
            k_max: 300,
            c: 1e12,
            tol_b: 1e-8,
            tol_n: 1e-6,
            newton_max_iter: 100,
            fallback: true,
            force_newton: false,
            record_timings: true,
        }
    }
}

impl PgdSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_max", self.alpha_max),
            ("alpha_fallback", self.alpha_fallback),
            ("eps_alpha", self.eps_alpha),
            ("C", self.c),
            ("tol_B", self.tol_b),
            ("tol_N", self.tol_n),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::parameter(name, format!("{v} must be positive and finite")));
            }
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::parameter("omega", format!("{} must lie in (0, 1]", self.omega)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::parameter("tol", format!("{} must be non-negative", self.tol)));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::parameter("newton_max_iter", "must be at least 1"));
        }
        Ok(())
    }

    pub fn projection(&self) -> ProjectionSettings {
        ProjectionSettings {
            c: self.c,
            tol_b: self.tol_b,
            tol_n: self.tol_n,
            max_iter: self.newton_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub rho: Vec<f64>,
    pub rho_prev: Option<Vec<f64>>,
    pub grad: Option<Vec<f64>>,
    pub grad_prev: Option<Vec<f64>>,
    /// `None` after a reset; the next direction is the plain gradient.
    pub direction_prev: Option<Vec<f64>>,
    pub alpha: f64,
    pub iteration: usize,
    pub last_violation: Vec<f64>,
    /// Set when the last projection did not converge.
    pub force_fallback: bool,
}

impl OptimizerState {
    pub fn new(rho: Vec<f64>, m: usize) -> Self {
        OptimizerState {
            rho,
            rho_prev: None,
            grad: None,
            grad_prev: None,
            direction_prev: None,
            alpha: 0.0,
            iteration: 0,
            last_violation: vec![0.0; m],
            force_fallback: false,
        }
    }
}

/// One optimizer iteration: objective and violations at `ρ_t`, and the step
/// that produced `ρ_{t+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    /// `max(g_j, 0)` for inequality rows, `|g_j|` for equality rows.
    pub violations: Vec<f64>,
    pub step_size: f64,
    /// `‖ρ_{t+1} − ρ_t‖ / ‖ρ_{t+1}‖`.
    pub relative_change: f64,
    pub step_norm: f64,
    pub projection_path: String,
    pub projection_iters: usize,
    pub projection_converged: bool,
    pub fallback: bool,
    pub fea_seconds: f64,
    pub projection_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub records: Vec<IterationRecord>,
    pub design: Vec<f64>,
    pub stopped_early: bool,
}

pub(crate) fn violations(values: &[f64], is_equality: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(is_equality)
        .map(|(&g, &eq)| if eq { g.abs() } else { g.max(0.0) })
        .collect()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `min_{t<K} ‖ρ_{t+1} − ρ_t‖ · √K` over iterations without a fallback step.
pub fn rate_monitor(records: &[IterationRecord], k: usize) -> Option<f64> {
    records
        .iter()
        .take(k)
        .filter(|r| !r.fallback)
        .map(|r| r.step_norm)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))))
        .map(|m| m * (k as f64).sqrt())
}

/// Elapsed seconds, or always zero when disabled. The wasm32 target has no
/// monotonic clock in std, so timings are off there.
pub(crate) struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: Option<std::time::Instant>,
}

impl Stopwatch {
    pub(crate) fn start(enabled: bool) -> Self {
        #[cfg(not(target_arch = "wasm32"))]
        {
            Stopwatch {
                start: enabled.then(std::time::Instant::now),
            }
        }
        #[cfg(target_arch = "wasm32")]
        {
            let _ = enabled;
            Stopwatch {}
        }
    }

    pub(crate) fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.map_or(0.0, |s| s.elapsed().as_secs_f64())
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step_norm: f64, fallback: bool) -> IterationRecord {
        IterationRecord {
            iteration: 0,
            objective: 0.0,
            violations: vec![],
            step_size: 1.0,
            relative_change: 0.0,
            step_norm,
            projection_path: "single_binary".into(),
            projection_iters: 0,
            projection_converged: true,
            fallback,
            fea_seconds: 0.0,
            projection_seconds: 0.0,
        }
    }

    #[test]
    fn defaults_validate() {
        PgdSettings::default().validate().unwrap();
        let bad = PgdSettings {
            omega: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PgdSettings {
            alpha_max: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn violation_is_positive_part_or_magnitude() {
        assert_eq!(violations(&[-0.5, 0.2, -0.3], &[false, false, true]), vec![0.0, 0.2, 0.3]);
    }

    #[test]
    fn rate_monitor_skips_fallback_steps() {
        let rs = vec![record(0.5, false), record(0.01, true), record(0.2, false), record(0.1, false)];
        assert_eq!(rate_monitor(&rs, 3), Some(0.2 * 3f64.sqrt()));
        assert_eq!(rate_monitor(&rs, 4), Some(0.1 * 2.0));
        assert_eq!(rate_monitor(&rs[1..2], 1), None);
    }
}
