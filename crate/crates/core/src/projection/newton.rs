use nalgebra::{DMatrix, DVector};

use super::binary::{search_row, SearchStatus};
use super::{clip_step, delta_of_y, Bounds, ConstraintLinearization, ProjectionPath, ProjectionResult, ProjectionSettings};
use crate::error::{Error, Result};

const ARMIJO_C1: f64 = 1e-4;
/// Halvings tried on a Newton direction before switching to a dual descent step.
const NEWTON_BACKTRACKS: usize = 30;
const DUAL_BACKTRACKS: usize = 60;

fn check_settings(settings: &ProjectionSettings) -> Result<()> {
    if !(settings.c > 0.0) {
        return Err(Error::parameter("C", format!("{} must be positive", settings.c)));
    }
    if !(settings.tol_n > 0.0) || !(settings.tol_b > 0.0) {
        return Err(Error::parameter("tol_N", "tolerances must be positive"));
    }
    if settings.max_iter == 0 {
        return Err(Error::parameter("max_iter", "must be at least 1"));
    }
    Ok(())
}

/// Multi-constraint projection: first each row alone by bisection, keeping the
/// first result that also satisfies the other rows, then regularized Newton.
pub fn project_general_newton(
    rho_tilde: &[f64],
    lin: &ConstraintLinearization,
    bounds: Bounds,
    settings: &ProjectionSettings,
) -> Result<ProjectionResult> {
    lin.check_dims(rho_tilde)?;
    check_settings(settings)?;
    if lin.m() == 0 {
        return Err(Error::Domain("general projection needs at least one constraint".into()));
    }
    let mut binary_iters = 0;
    for j in 0..lin.m() {
        let search = match search_row(lin, j, rho_tilde, bounds, settings.tol_b, None) {
            Ok(s) => s,
            Err(Error::InfeasibleLinearization { .. }) => continue,
            Err(e) => return Err(e),
        };
        binary_iters += search.iters;
        if search.status == SearchStatus::Infeasible {
            continue;
        }
        let mut y = vec![0.0; lin.m()];
        y[j] = search.y;
        let delta = delta_of_y(&y, lin, rho_tilde, bounds);
        let feasible = (0..lin.m()).all(|k| {
            let r = lin.linear_residual(k, &delta);
            if lin.is_equality[k] {
                r.abs() <= settings.tol_n
            } else {
                r <= settings.tol_n
            }
        });
        if feasible {
            let eval = Evaluation::at(&y, lin, rho_tilde, bounds, settings.c);
            return Ok(ProjectionResult {
                slacks: y.iter().map(|v| -v / settings.c).collect(),
                residual: eval.phi_inf(),
                delta: eval.delta,
                y,
                path: ProjectionPath::SingleBinary,
                newton_iters: 0,
                binary_iters,
                converged: true,
            });
        }
    }
    let mut result = regularized_newton(rho_tilde, lin, bounds, settings)?;
    result.binary_iters = binary_iters;
    Ok(result)
}

struct Evaluation {
    delta: Vec<f64>,
    /// Convex dual objective whose gradient is `h`; see [`dual_descent_step`].
    dual: f64,
    /// Unclipped coordinates of `Σ y_j a_j`.
    free: Vec<bool>,
    h: Vec<f64>,
    phi: Vec<f64>,
}

impl Evaluation {
    fn at(y: &[f64], lin: &ConstraintLinearization, rho_tilde: &[f64], bounds: Bounds, c: f64) -> Self {
        let n = rho_tilde.len();
        let mut z = vec![0.0; n];
        for (row, &yj) in lin.grad_g.iter().zip(y) {
            for (zi, &a) in z.iter_mut().zip(row) {
                *zi += yj * a;
            }
        }
        let mut free = vec![false; n];
        let mut delta = vec![0.0; n];
        for i in 0..n {
            free[i] = z[i] > bounds.lower - rho_tilde[i] && z[i] < bounds.upper - rho_tilde[i];
            delta[i] = clip_step(z[i], rho_tilde[i], bounds);
        }
        let h: Vec<f64> = (0..lin.m())
            .map(|j| lin.linear_residual(j, &delta) + y[j] / c)
            .collect();
        let phi = (0..lin.m())
            .map(|j| {
                if lin.is_equality[j] {
                    h[j]
                } else {
                    (-y[j]).min(-h[j])
                }
            })
            .collect();
        let y_sq: f64 = y.iter().map(|v| v * v).sum();
        let dual = -0.5 * delta.iter().map(|d| d * d).sum::<f64>() + super::dot(y, &h) - 0.5 * y_sq / c;
        Evaluation {
            delta,
            dual,
            free,
            h,
            phi,
        }
    }

    fn merit(&self) -> f64 {
        0.5 * self.phi.iter().map(|p| p * p).sum::<f64>()
    }

    fn phi_inf(&self) -> f64 {
        self.phi.iter().fold(0.0f64, |a, p| a.max(p.abs()))
    }

    /// `J_h = A D Aᵀ + I / C`.
    fn jacobian_h(&self, lin: &ConstraintLinearization, c: f64) -> DMatrix<f64> {
        let m = lin.m();
        let mut jh = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            for k in j..m {
                let (a, b) = (&lin.grad_g[j], &lin.grad_g[k]);
                let v: f64 = (0..self.free.len())
                    .filter(|&i| self.free[i])
                    .map(|i| a[i] * b[i])
                    .sum();
                jh[(j, k)] = v;
                jh[(k, j)] = v;
            }
            jh[(j, j)] += 1.0 / c;
        }
        jh
    }

    /// Generalized Jacobian of `Φ`; rows follow the branch taken by the min.
    fn jacobian(&self, y: &[f64], lin: &ConstraintLinearization, c: f64) -> DMatrix<f64> {
        let m = lin.m();
        let jh = self.jacobian_h(lin, c);
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for j in 0..m {
            if lin.is_equality[j] {
                jac.set_row(j, &jh.row(j));
            } else if y[j] >= self.h[j] {
                jac[(j, j)] = -1.0;
            } else {
                jac.set_row(j, &(-jh.row(j)));
            }
        }
        jac
    }
}

fn newton_direction(jac: DMatrix<f64>, phi: &[f64]) -> Result<Vec<f64>> {
    let rhs = DVector::from_iterator(phi.len(), phi.iter().map(|p| -p));
    let lu = jac.clone().lu();
    if let Some(d) = lu.solve(&rhs) {
        if d.iter().all(|v| v.is_finite()) {
            return Ok(d.iter().copied().collect());
        }
    }
    Err(Error::Numerical(format!(
        "singular generalized Jacobian in projection (m = {}, max |entry| = {:.3e})",
        phi.len(),
        jac.amax()
    )))
}

/// Projected Newton step on the dual objective
/// `ψ(y) = −½‖δ(y)‖² + yᵀh(y) − ‖y‖²/(2C)`, which is convex with gradient
/// `h` and is minimized over `y ≤ 0` (inequality rows) exactly where `Φ = 0`.
/// Used when the Newton direction on `Φ` admits no acceptable step, which
/// happens when `A D Aᵀ` is nearly singular and the full step leaves the
/// current piece.
fn dual_descent_step(
    y: &[f64],
    eval: &Evaluation,
    lin: &ConstraintLinearization,
    rho_tilde: &[f64],
    bounds: Bounds,
    c: f64,
) -> Option<(Vec<f64>, Evaluation)> {
    let m = y.len();
    let g = &eval.h;
    let jh = eval.jacobian_h(lin, c);
    let at_bound = |j: usize| !lin.is_equality[j] && y[j] >= 0.0;

    // Rows at the bound with an outward gradient stay put; rows whose coupled
    // Newton component would leave the feasible side take a diagonal step.
    let mut d = vec![0.0; m];
    let mut free: Vec<usize> = (0..m).filter(|&j| !(at_bound(j) && g[j] < 0.0)).collect();
    let mut diagonal: Vec<usize> = Vec::new();
    loop {
        let k = free.len();
        let sub = DMatrix::from_fn(k, k, |a, b| jh[(free[a], free[b])]);
        let rhs = DVector::from_fn(k, |a, _| -g[free[a]]);
        let sol = if k == 0 { DVector::zeros(0) } else { sub.cholesky()?.solve(&rhs) };
        let leaving: Vec<usize> = (0..k).filter(|&a| at_bound(free[a]) && sol[a] > 0.0).collect();
        if leaving.is_empty() {
            for (a, &j) in free.iter().enumerate() {
                d[j] = sol[a];
            }
            break;
        }
        for &a in leaving.iter().rev() {
            diagonal.push(free.remove(a));
        }
    }
    for &j in &diagonal {
        d[j] = -g[j] / jh[(j, j)];
    }

    let mut gamma = 1.0;
    for _ in 0..DUAL_BACKTRACKS {
        let trial: Vec<f64> = (0..m)
            .map(|j| {
                let v = y[j] + gamma * d[j];
                if lin.is_equality[j] { v } else { v.min(0.0) }
            })
            .collect();
        let decrease: f64 = (0..m).map(|j| g[j] * (trial[j] - y[j])).sum();
        let next = Evaluation::at(&trial, lin, rho_tilde, bounds, c);
        if decrease < 0.0 && next.dual <= eval.dual + ARMIJO_C1 * decrease {
            return Some((trial, next));
        }
        gamma *= 0.5;
    }
    None
}

/// Semismooth Newton on the complementarity system of the slack-regularized
/// projection, started from `y = 0`.
pub fn regularized_newton(
    rho_tilde: &[f64],
    lin: &ConstraintLinearization,
    bounds: Bounds,
    settings: &ProjectionSettings,
) -> Result<ProjectionResult> {
    lin.check_dims(rho_tilde)?;
    check_settings(settings)?;
    let c = settings.c;
    let mut y = vec![0.0; lin.m()];
    let mut eval = Evaluation::at(&y, lin, rho_tilde, bounds, c);
    let mut iters = 0;
    let mut converged = eval.phi_inf() <= settings.tol_n;

    while !converged && iters < settings.max_iter {
        iters += 1;
        let d = newton_direction(eval.jacobian(&y, lin, c), &eval.phi)?;
        let merit = eval.merit();
        let mut gamma = 1.0;
        let mut accepted = None;
        for _ in 0..NEWTON_BACKTRACKS {
            let trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + gamma * b).collect();
            let next = Evaluation::at(&trial, lin, rho_tilde, bounds, c);
            if next.merit() <= (1.0 - 2.0 * ARMIJO_C1 * gamma) * merit {
                // Keep the iterate dual-feasible and ψ monotone so the two
                // step kinds cannot undo each other.
                let feasible = (0..lin.m()).all(|j| lin.is_equality[j] || trial[j] <= 0.0);
                if feasible && next.dual <= eval.dual {
                    accepted = Some((trial, next));
                }
                break;
            }
            gamma *= 0.5;
        }
        if accepted.is_none() {
            accepted = dual_descent_step(&y, &eval, lin, rho_tilde, bounds, c);
        }
        match accepted {
            Some((trial, next)) => {
                y = trial;
                eval = next;
            }
            None => break,
        }
        converged = eval.phi_inf() <= settings.tol_n;
    }

    // Φ is piecewise linear, so one more full step from a converged point
    // usually lands on the exact root of the identified piece.
    if converged && eval.merit() > 0.0 {
        if let Ok(d) = newton_direction(eval.jacobian(&y, lin, c), &eval.phi) {
            let trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + b).collect();
            let next = Evaluation::at(&trial, lin, rho_tilde, bounds, c);
            if next.merit() < eval.merit() {
                y = trial;
                eval = next;
            }
        }
    }

    // The `y/C` term biases δ by about |y|/C. When the unregularized system
    // has a root on the same piece, step onto it as long as the result still
    // passes the regularized stopping test.
    if converged {
        let exact = Evaluation::at(&y, lin, rho_tilde, bounds, f64::INFINITY);
        if exact.merit() > 0.0 {
            if let Ok(d) = newton_direction(exact.jacobian(&y, lin, f64::INFINITY), &exact.phi) {
                let trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + b).collect();
                let feasible = (0..lin.m()).all(|j| lin.is_equality[j] || trial[j] <= 0.0);
                let limit = Evaluation::at(&trial, lin, rho_tilde, bounds, f64::INFINITY);
                let next = Evaluation::at(&trial, lin, rho_tilde, bounds, c);
                if feasible && limit.merit() < exact.merit() && next.phi_inf() <= settings.tol_n {
                    y = trial;
                    eval = next;
                }
            }
        }
    }

    Ok(ProjectionResult {
        slacks: y.iter().map(|v| -v / c).collect(),
        residual: eval.phi_inf(),
        delta: eval.delta,
        y,
        path: ProjectionPath::Newton,
        newton_iters: iters,
        binary_iters: 0,
        converged,
    })
}
