use serde::{Deserialize, Serialize};

use super::{norm, violations, DesignProblem, IterationRecord, RunHistory, Stopwatch};
use crate::error::{Error, Result};
use crate::projection::Bounds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcSettings {
    pub eta: f64,
    pub move_limit: f64,
    pub k_max: usize,
    /// Multiplier bisection stops once `|g(ρ⁺)|` is below this.
    pub volume_tol: f64,
    pub record_timings: bool,
}

impl Default for OcSettings {
    fn default() -> Self {
        OcSettings {
            eta: 0.5,
            move_limit: 0.2,
            k_max: 300,
            volume_tol: 1e-10,
            record_timings: true,
        }
    }
}

const MAX_BISECTIONS: usize = 200;

/// Resizing update `ρ⁺ = clip(ρ·B^η)` within the move limit, with
/// `B = −∂c/∂ρ / (λ ∂g/∂ρ)` and `λ` bisected in log space so that the linear
/// volume constraint `g(ρ) + ∂gᵀ(ρ⁺ − ρ)` is zero. Returns the new design and
/// the number of bisection steps.
pub fn oc_update(
    rho: &[f64],
    objective_grad: &[f64],
    volume_grad: &[f64],
    volume_value: f64,
    bounds: Bounds,
    settings: &OcSettings,
) -> Result<(Vec<f64>, usize)> {
    let n = rho.len();
    if objective_grad.len() != n || volume_grad.len() != n {
        return Err(Error::Domain("OC update given vectors of different lengths".into()));
    }
    if volume_grad.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Unsupported("OC needs a strictly positive volume gradient".into()));
    }
    let base_volume = volume_value - volume_grad.iter().zip(rho).map(|(a, r)| a * r).sum::<f64>();
    let candidate = |log_lambda: f64| -> Vec<f64> {
        let lambda = log_lambda.exp();
        (0..n)
            .map(|e| {
                let lo = bounds.lower.max(rho[e] - settings.move_limit);
                let hi = bounds.upper.min(rho[e] + settings.move_limit);
                let b = (-objective_grad[e]).max(0.0) / (lambda * volume_grad[e]);
                let v = if rho[e] == 0.0 { 0.0 } else { rho[e] * b.powf(settings.eta) };
                if v.is_nan() { hi } else { v.clamp(lo, hi) }
            })
            .collect()
    };
    let volume = |x: &[f64]| base_volume + volume_grad.iter().zip(x).map(|(a, r)| a * r).sum::<f64>();

    let (mut lo, mut hi) = (-690.0f64, 690.0f64);
    let mut best = candidate(0.5 * (lo + hi));
    let mut iters = 0;
    while iters < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        best = candidate(mid);
        let g = volume(&best);
        iters += 1;
        if g.abs() <= settings.volume_tol || hi - lo < 1e-15 {
            break;
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((best, iters))
}

/// Stepwise optimality-criteria loop for compliance under one volume
/// constraint, started from the uniform design at the target fraction.
pub struct OcOptimizer<'a, P: DesignProblem + ?Sized> {
    problem: &'a P,
    settings: OcSettings,
    rho: Vec<f64>,
    iteration: usize,
}

impl<'a, P: DesignProblem + ?Sized> OcOptimizer<'a, P> {
    pub fn new(problem: &'a P, settings: OcSettings) -> Result<Self> {
        let target = problem
            .oc_volume_target()
            .filter(|_| problem.constraint_count() == 1)
            .ok_or_else(|| Error::Unsupported("OC requires compliance minimization under one volume constraint".into()))?;
        if !(settings.eta > 0.0 && settings.move_limit > 0.0) {
            return Err(Error::parameter("eta", "eta and move limit must be positive"));
        }
        Ok(OcOptimizer {
            problem,
            settings,
            rho: vec![target; problem.design_len()],
            iteration: 0,
        })
    }

    pub fn design(&self) -> &[f64] {
        &self.rho
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.settings.k_max
    }

    pub fn step(&mut self) -> Result<IterationRecord> {
        let eval = self.problem.evaluate(&self.rho)?;
        let clock = Stopwatch::start(self.settings.record_timings);
        let (next, iters) = oc_update(
            &self.rho,
            &eval.objective_grad,
            &eval.constraint_grads[0],
            eval.constraint_values[0],
            self.problem.bounds(),
            &self.settings,
        )?;
        let update_seconds = clock.seconds();
        let step_norm = norm(&next.iter().zip(&self.rho).map(|(a, b)| a - b).collect::<Vec<_>>());
        let next_norm = norm(&next);
        let record = IterationRecord {
            iteration: self.iteration,
            objective: eval.objective,
            violations: violations(&eval.constraint_values, &[false]),
            step_size: self.settings.move_limit,
            relative_change: if next_norm > 0.0 { step_norm / next_norm } else { step_norm },
            step_norm,
            projection_path: "oc_bisection".into(),
            projection_iters: iters,
            projection_converged: true,
            fallback: false,
            fea_seconds: eval.fea_seconds,
            projection_seconds: update_seconds,
        };
        self.rho = next;
        self.iteration += 1;
        Ok(record)
    }
}

pub fn run_oc<P: DesignProblem + ?Sized>(problem: &P, settings: &OcSettings) -> Result<RunHistory> {
    let mut opt = OcOptimizer::new(problem, *settings)?;
    let mut records = Vec::with_capacity(settings.k_max);
    while !opt.is_finished() {
        records.push(opt.step()?);
    }
    Ok(RunHistory {
        records,
        design: opt.rho,
        stopped_early: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ratio_is_a_fixed_point() {
        // With −∂c/∂ρ = λ ∂g/∂ρ, B = 1 and the feasible design stays put.
        let rho = [0.3, 0.5, 0.7];
        let dv = [1.0 / 3.0; 3];
        let dc: Vec<f64> = dv.iter().map(|v| -2.5 * v).collect();
        let (next, _) = oc_update(&rho, &dc, &dv, 0.0, Bounds::UNIT, &OcSettings::default()).unwrap();
        for (a, b) in next.iter().zip(&rho) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn volume_is_held_after_update() {
        let rho: Vec<f64> = (0..40).map(|i| 0.2 + 0.01 * (i % 7) as f64).collect();
        let dv = vec![1.0 / 40.0; 40];
        let dc: Vec<f64> = (0..40).map(|i| -((i * 37 % 11) as f64 + 0.1)).collect();
        let target = 0.25;
        let g = rho.iter().sum::<f64>() / 40.0 - target;
        let (next, iters) = oc_update(&rho, &dc, &dv, g, Bounds::UNIT, &OcSettings::default()).unwrap();
        let vol = next.iter().sum::<f64>() / 40.0;
        assert!((vol - target).abs() <= 1e-9, "{vol}");
        assert!(iters < MAX_BISECTIONS);
        for (a, b) in next.iter().zip(&rho) {
            assert!((a - b).abs() <= 0.2 + 1e-15 && (0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn zero_sensitivity_elements_shrink_by_the_move_limit() {
        let rho = [0.5, 0.5];
        let dv = [0.5, 0.5];
        let (next, _) = oc_update(&rho, &[0.0, -1.0], &dv, 0.0, Bounds::UNIT, &OcSettings::default()).unwrap();
        assert!((next[0] - 0.3).abs() < 1e-12);
        assert!((next[1] - 0.7).abs() < 1e-9);
    }
}
