use super::step::{cg_direction, fallback_step_size, spectral_step_size};
use super::{norm, violations, DesignProblem, IterationRecord, OptimizerState, PgdSettings, RunHistory, Stopwatch};
use crate::error::{Error, Result};
use crate::projection::{project, project_general_newton, Bounds, ConstraintLinearization, ProjectionResult};

/// Everything decided before the projection: the evaluation at `ρ_t`, the
/// step size and direction, and the linearized constraints around `ρ̃`.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub objective: f64,
    pub objective_grad: Vec<f64>,
    pub violations: Vec<f64>,
    pub alpha: f64,
    pub direction: Vec<f64>,
    pub fallback: bool,
    pub rho_tilde: Vec<f64>,
    pub linearization: ConstraintLinearization,
    pub fea_seconds: f64,
}

pub fn plan_step<P: DesignProblem + ?Sized>(
    problem: &P,
    state: &OptimizerState,
    settings: &PgdSettings,
) -> Result<StepPlan> {
    let eval = problem.evaluate(&state.rho)?;
    let n = state.rho.len();
    if eval.objective_grad.len() != n || eval.constraint_grads.iter().any(|g| g.len() != n) {
        return Err(Error::Domain("evaluator returned gradients of the wrong length".into()));
    }
    let is_equality = problem.is_equality();
    let violation = violations(&eval.constraint_values, &is_equality);
    let worst = violation.iter().fold(0.0f64, |a, &v| a.max(v));
    let t = state.iteration;
    let grad = &eval.objective_grad;

    let mut fallback = t == 0
        || state.force_fallback
        || (settings.fallback && t >= settings.t_warmup && worst > settings.tol_n);
    let mut alpha = 0.0;
    if !fallback {
        alpha = match (&state.rho_prev, &state.grad) {
            (Some(prev), Some(g_prev)) => {
                let s: Vec<f64> = state.rho.iter().zip(prev).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = grad.iter().zip(g_prev).map(|(a, b)| a - b).collect();
                spectral_step_size(&s, &y, settings)
            }
            _ => 0.0,
        };
        fallback = !(alpha > 0.0 && alpha.is_finite());
    }
    let direction = if fallback {
        alpha = fallback_step_size(grad, settings);
        grad.clone()
    } else {
        cg_direction(grad, state.grad.as_deref(), state.direction_prev.as_deref())
    };

    let gd_step: Vec<f64> = direction.iter().map(|d| settings.omega * alpha * d).collect();
    let rho_tilde: Vec<f64> = state.rho.iter().zip(&gd_step).map(|(r, s)| r - s).collect();
    let m = eval.constraint_values.len();
    // Constraints arrive as g ≤ 0, so every right-hand side is zero.
    let mut lin = ConstraintLinearization::new(eval.constraint_grads, eval.constraint_values, vec![0.0; m], gd_step)?
        .with_equality(is_equality)?;
    if let Some(partition) = problem.independence_partition() {
        lin = lin.with_partition(partition)?;
    }
    Ok(StepPlan {
        objective: eval.objective,
        objective_grad: eval.objective_grad,
        violations: violation,
        alpha,
        direction,
        fallback,
        rho_tilde,
        linearization: lin,
        fea_seconds: eval.fea_seconds,
    })
}

/// Projects the plan with the solver the settings select.
pub fn project_plan(plan: &StepPlan, bounds: Bounds, settings: &PgdSettings) -> Result<ProjectionResult> {
    if settings.force_newton && plan.linearization.m() > 0 {
        project_general_newton(&plan.rho_tilde, &plan.linearization, bounds, &settings.projection())
    } else {
        project(&plan.rho_tilde, &plan.linearization, bounds, &settings.projection())
    }
}

/// Moves `state` to `ρ_{t+1}` using a projection of `plan`.
pub fn finish_step(
    state: &mut OptimizerState,
    plan: StepPlan,
    projected: &ProjectionResult,
    bounds: Bounds,
    projection_seconds: f64,
) -> IterationRecord {
    let next = projected.apply(&plan.rho_tilde, bounds);
    let step_norm = norm(&next.iter().zip(&state.rho).map(|(a, b)| a - b).collect::<Vec<_>>());
    let next_norm = norm(&next);
    let relative_change = if next_norm > 0.0 { step_norm / next_norm } else { step_norm };

    let record = IterationRecord {
        iteration: state.iteration,
        objective: plan.objective,
        violations: plan.violations.clone(),
        step_size: plan.alpha,
        relative_change,
        step_norm,
        projection_path: projected.path.as_str().to_string(),
        projection_iters: projected.newton_iters + projected.binary_iters,
        projection_converged: projected.converged,
        fallback: plan.fallback,
        fea_seconds: plan.fea_seconds,
        projection_seconds,
    };

    state.rho_prev = Some(std::mem::replace(&mut state.rho, next));
    state.grad_prev = state.grad.replace(plan.objective_grad);
    state.direction_prev = Some(plan.direction);
    state.alpha = plan.alpha;
    state.iteration += 1;
    state.last_violation = plan.violations;
    state.force_fallback = !projected.converged;
    record
}

/// Advances `state` from `ρ_t` to `ρ_{t+1}` and reports the iteration.
pub fn pgd_step<P: DesignProblem + ?Sized>(
    problem: &P,
    state: &mut OptimizerState,
    settings: &PgdSettings,
) -> Result<IterationRecord> {
    let plan = plan_step(problem, state, settings)?;
    let bounds = problem.bounds();
    let clock = Stopwatch::start(settings.record_timings);
    let projected = project_plan(&plan, bounds, settings)?;
    let seconds = clock.seconds();
    Ok(finish_step(state, plan, &projected, bounds, seconds))
}

/// Stepwise driver; owns the state and stops on `k_max` or the change rule.
pub struct PgdOptimizer<'a, P: DesignProblem + ?Sized> {
    problem: &'a P,
    settings: PgdSettings,
    state: OptimizerState,
    stopped: bool,
}

impl<'a, P: DesignProblem + ?Sized> PgdOptimizer<'a, P> {
    pub fn new(problem: &'a P, settings: PgdSettings) -> Result<Self> {
        settings.validate()?;
        let rho = problem.initial_design();
        if rho.len() != problem.design_len() {
            return Err(Error::Domain("initial design has the wrong length".into()));
        }
        let bounds = problem.bounds();
        if rho.iter().any(|&r| r < bounds.lower || r > bounds.upper) {
            return Err(Error::Domain("initial design violates the box bounds".into()));
        }
        Ok(PgdOptimizer {
            state: OptimizerState::new(rho, problem.constraint_count()),
            problem,
            settings,
            stopped: false,
        })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn design(&self) -> &[f64] {
        &self.state.rho
    }

    pub fn settings(&self) -> &PgdSettings {
        &self.settings
    }

    pub fn is_finished(&self) -> bool {
        self.stopped || self.state.iteration >= self.settings.k_max
    }

    pub fn stopped_early(&self) -> bool {
        self.stopped
    }

    pub fn step(&mut self) -> Result<IterationRecord> {
        let record = pgd_step(self.problem, &mut self.state, &self.settings)?;
        if self.settings.tol > 0.0 && record.relative_change <= self.settings.tol {
            self.stopped = true;
        }
        Ok(record)
    }
}

pub fn run_pgd<P: DesignProblem + ?Sized>(problem: &P, settings: &PgdSettings) -> Result<RunHistory> {
    let mut opt = PgdOptimizer::new(problem, *settings)?;
    let mut records = Vec::with_capacity(settings.k_max);
    while !opt.is_finished() {
        records.push(opt.step()?);
    }
    Ok(RunHistory {
        records,
        stopped_early: opt.stopped_early(),
        design: opt.state.rho,
    })
}
