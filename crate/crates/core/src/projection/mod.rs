//! Euclidean projection onto `[l, u]^N` intersected with linearized constraints.
//!
//! With `ρ̃` the gradient-stepped design, the subproblem is
//!
//! ```text
//! min ½‖δ‖²  s.t.  l ≤ ρ̃ + δ ≤ u,   ∇g_jᵀ δ ≤ Ĝ_j   (j = 1..m)
//! ```
//!
//! where `Ĝ_j = G_j − g_j(ρ_t) + stepᵀ∇g_j` folds the linearization point and
//! the gradient step into one right-hand side. The minimizer has the form
//! `δ_i(y) = clip(Σ_j y_j ∇g_ji, l − ρ̃_i, u − ρ̃_i)` for a dual vector
//! `y ≤ 0`, so every solver here searches over `m` dual values only.
//!
//! The regularized variant adds slacks `s ≥ 0` penalized by `(C/2)‖s‖²`. It is
//! always feasible; its dual conditions are `y ≤ 0`, `h(y) ≤ 0`, `y∘h(y) = 0`
//! with `h_j(y) = ∇g_jᵀδ(y) + y_j / C − Ĝ_j` and slacks `s = −y / C`.

mod binary;
mod newton;
pub mod oracle;

use serde::{Deserialize, Serialize};

pub use binary::{project_independent, project_single_binary_search};
pub use newton::{project_general_newton, regularized_newton};
pub use oracle::reference_projection_oracle;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds {
        lower: 0.0,
        upper: 1.0,
    };

    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::parameter("bounds", format!("need lower < upper, got [{lower}, {upper}]")));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

/// Per-iteration constraint data handed to the projection solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLinearization {
    /// One row of length `N` per constraint.
    pub grad_g: Vec<Vec<f64>>,
    pub g_values: Vec<f64>,
    pub bounds_g: Vec<f64>,
    /// The step already applied to reach `ρ̃`: `ρ̃ = ρ_t − gd_step`.
    pub gd_step: Vec<f64>,
    /// `Ĝ_j = G_j − g_j + gd_stepᵀ∇g_j`.
    pub g_hat: Vec<f64>,
    pub is_equality: Vec<bool>,
    /// Disjoint variable sets; constraint `j` depends only on `partition[j]`.
    pub independence_partition: Option<Vec<Vec<usize>>>,
}

impl ConstraintLinearization {
    pub fn new(
        grad_g: Vec<Vec<f64>>,
        g_values: Vec<f64>,
        bounds_g: Vec<f64>,
        gd_step: Vec<f64>,
    ) -> Result<Self> {
        let m = grad_g.len();
        let n = gd_step.len();
        if g_values.len() != m || bounds_g.len() != m {
            return Err(Error::Domain(format!(
                "{m} gradient rows but {} values and {} bounds",
                g_values.len(),
                bounds_g.len()
            )));
        }
        if let Some(j) = grad_g.iter().position(|r| r.len() != n) {
            return Err(Error::Domain(format!(
                "gradient row {j} has length {}, expected {n}",
                grad_g[j].len()
            )));
        }
        let g_hat = (0..m)
            .map(|j| bounds_g[j] - g_values[j] + dot(&gd_step, &grad_g[j]))
            .collect();
        Ok(ConstraintLinearization {
            grad_g,
            g_values,
            bounds_g,
            gd_step,
            g_hat,
            is_equality: vec![false; m],
            independence_partition: None,
        })
    }

    /// Linearization at `ρ̃` itself (no gradient step): rows `a_j` with `a_jᵀδ ≤ rhs_j`.
    pub fn from_halfspaces(rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        let m = rows.len();
        Self::new(rows, vec![0.0; m], rhs, vec![0.0; n])
    }

    pub fn with_equality(mut self, is_equality: Vec<bool>) -> Result<Self> {
        if is_equality.len() != self.m() {
            return Err(Error::Domain("equality flags do not match constraint count".into()));
        }
        self.is_equality = is_equality;
        Ok(self)
    }

    pub fn with_partition(mut self, partition: Vec<Vec<usize>>) -> Result<Self> {
        if partition.len() != self.m() {
            return Err(Error::Domain(format!(
                "partition has {} sets for {} constraints",
                partition.len(),
                self.m()
            )));
        }
        let n = self.n();
        let mut owner = vec![usize::MAX; n];
        for (j, set) in partition.iter().enumerate() {
            for &i in set {
                if i >= n {
                    return Err(Error::Domain(format!("partition index {i} out of range")));
                }
                if owner[i] != usize::MAX {
                    return Err(Error::Domain(format!(
                        "variable {i} appears in sets {} and {j}",
                        owner[i]
                    )));
                }
                owner[i] = j;
            }
        }
        for (j, row) in self.grad_g.iter().enumerate() {
            if let Some(i) = row.iter().enumerate().position(|(i, &a)| a != 0.0 && owner[i] != j) {
                return Err(Error::Domain(format!(
                    "constraint {j} has nonzero gradient at variable {i} outside its set"
                )));
            }
        }
        self.independence_partition = Some(partition);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.grad_g.len()
    }

    pub fn n(&self) -> usize {
        self.gd_step.len()
    }

    /// `∇g_jᵀδ − Ĝ_j`: the linearized constraint value, feasible when `≤ 0`.
    pub fn linear_residual(&self, j: usize, delta: &[f64]) -> f64 {
        dot(&self.grad_g[j], delta) - self.g_hat[j]
    }

    fn check_dims(&self, rho_tilde: &[f64]) -> Result<()> {
        if rho_tilde.len() != self.n() {
            return Err(Error::Domain(format!(
                "design has {} entries, linearization expects {}",
                rho_tilde.len(),
                self.n()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionPath {
    SingleBinary,
    IndependentBinary,
    Newton,
}

impl ProjectionPath {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProjectionPath::SingleBinary => "single_binary",
            ProjectionPath::IndependentBinary => "independent_binary",
            ProjectionPath::Newton => "newton",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// Correction such that `ρ̃ + δ ∈ [l, u]^N`.
    pub delta: Vec<f64>,
    /// Dual vector; non-positive on inequality rows at a solution.
    pub y: Vec<f64>,
    pub slacks: Vec<f64>,
    pub path: ProjectionPath,
    pub newton_iters: usize,
    pub binary_iters: usize,
    /// Complementarity residual `‖Φ‖∞` at exit.
    pub residual: f64,
    pub converged: bool,
}

impl ProjectionResult {
    /// `clamp(ρ̃ + δ)`; the clamp only removes rounding from `ρ̃ + (l − ρ̃)`.
    pub fn apply(&self, rho_tilde: &[f64], bounds: Bounds) -> Vec<f64> {
        rho_tilde
            .iter()
            .zip(&self.delta)
            .map(|(r, d)| bounds.clamp(r + d))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSettings {
    /// Slack penalty `C`.
    pub c: f64,
    /// Bisection stops when the dual bracket is narrower than this.
    pub tol_b: f64,
    /// Exit tolerance on `‖Φ‖∞`, also the feasibility slack for Stage-1 candidates.
    pub tol_n: f64,
    pub max_iter: usize,
}

impl Default for ProjectionSettings {
    fn default() -> Self {
        ProjectionSettings {
            c: 1e12,
            tol_b: 1e-8,
            tol_n: 1e-6,
            max_iter: 100,
        }
    }
}

/// Picks the solver by structure: one row → bisection, a valid independence
/// partition → per-block bisection, anything else → general Newton.
pub fn project(
    rho_tilde: &[f64],
    lin: &ConstraintLinearization,
    bounds: Bounds,
    settings: &ProjectionSettings,
) -> Result<ProjectionResult> {
    match lin.m() {
        0 => {
            lin.check_dims(rho_tilde)?;
            Ok(ProjectionResult {
                delta: delta_of_y(&[], lin, rho_tilde, bounds),
                y: vec![],
                slacks: vec![],
                path: ProjectionPath::SingleBinary,
                newton_iters: 0,
                binary_iters: 0,
                residual: 0.0,
                converged: true,
            })
        }
        1 => fallback_on_zero_gradient(
            project_single_binary_search(rho_tilde, lin, bounds, settings.tol_b),
            rho_tilde,
            lin,
            bounds,
            settings,
        ),
        _ if lin.independence_partition.is_some() => fallback_on_zero_gradient(
            project_independent(rho_tilde, lin, bounds, settings.tol_b),
            rho_tilde,
            lin,
            bounds,
            settings,
        ),
        _ => project_general_newton(rho_tilde, lin, bounds, settings),
    }
}

/// A violated row with a vanishing gradient cannot be bracketed; the slack
/// formulation still has a solution.
fn fallback_on_zero_gradient(
    result: Result<ProjectionResult>,
    rho_tilde: &[f64],
    lin: &ConstraintLinearization,
    bounds: Bounds,
    settings: &ProjectionSettings,
) -> Result<ProjectionResult> {
    match result {
        Err(Error::InfeasibleLinearization { .. }) => regularized_newton(rho_tilde, lin, bounds, settings),
        other => other,
    }
}

/// `δ_i(y) = clip(Σ_j y_j ∇g_ji, l − ρ̃_i, u − ρ̃_i)`.
pub fn delta_of_y(
    y: &[f64],
    lin: &ConstraintLinearization,
    rho_tilde: &[f64],
    bounds: Bounds,
) -> Vec<f64> {
    let mut z = vec![0.0; rho_tilde.len()];
    for (row, &yj) in lin.grad_g.iter().zip(y) {
        if yj != 0.0 {
            for (zi, &a) in z.iter_mut().zip(row) {
                *zi += yj * a;
            }
        }
    }
    z.iter()
        .zip(rho_tilde)
        .map(|(&zi, &r)| clip_step(zi, r, bounds))
        .collect()
}

#[inline]
pub(crate) fn clip_step(step: f64, rho_tilde: f64, bounds: Bounds) -> f64 {
    let lo = bounds.lower - rho_tilde;
    let hi = bounds.upper - rho_tilde;
    if step < lo {
        lo
    } else if step > hi {
        hi
    } else {
        step
    }
}

/// `h_j(y) = ∇g_jᵀδ(y) + y_j / C − Ĝ_j`.
pub fn constraint_residual_h(
    y: &[f64],
    lin: &ConstraintLinearization,
    rho_tilde: &[f64],
    bounds: Bounds,
    c: f64,
) -> Result<Vec<f64>> {
    lin.check_dims(rho_tilde)?;
    if y.len() != lin.m() {
        return Err(Error::Domain(format!("dual has {} entries, expected {}", y.len(), lin.m())));
    }
    if !(c > 0.0) {
        return Err(Error::parameter("C", format!("{c} must be positive")));
    }
    let delta = delta_of_y(y, lin, rho_tilde, bounds);
    Ok((0..lin.m())
        .map(|j| lin.linear_residual(j, &delta) + y[j] / c)
        .collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halfspace(rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> ConstraintLinearization {
        ConstraintLinearization::from_halfspaces(rows, rhs).unwrap()
    }

    #[test]
    fn zero_dual_gives_box_clip() {
        let lin = halfspace(vec![vec![1.0, 1.0, 1.0]], vec![0.0]);
        let d = delta_of_y(&[0.0], &lin, &[0.5, -0.2, 1.3], Bounds::UNIT);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.2).abs() < 1e-15);
        assert!((d[2] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn lower_clip_and_interior_examples() {
        let lin = halfspace(vec![vec![1.0]], vec![0.0]);
        assert_eq!(delta_of_y(&[-2.0], &lin, &[0.5], Bounds::UNIT), vec![-0.5]);

        let lin = halfspace(vec![vec![0.5, 0.5]], vec![0.0]);
        let d = delta_of_y(&[-0.6], &lin, &[0.8, 0.6], Bounds::UNIT);
        assert!((d[0] + 0.3).abs() < 1e-15 && (d[1] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn g_hat_is_consistent_with_its_fields() {
        let lin = ConstraintLinearization::new(
            vec![vec![0.25, 0.5, -1.0]],
            vec![0.7],
            vec![0.2],
            vec![0.1, -0.4, 0.3],
        )
        .unwrap();
        let want = 0.2 - 0.7 + (0.025 - 0.2 - 0.3);
        assert!((lin.g_hat[0] - want).abs() < 1e-14);
    }

    #[test]
    fn partition_validation() {
        let lin = halfspace(vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]], vec![0.0, 0.0]);
        assert!(lin.clone().with_partition(vec![vec![0, 1], vec![2, 3]]).is_ok());
        assert!(lin.clone().with_partition(vec![vec![0, 1], vec![1, 2, 3]]).is_err());
        assert!(lin.clone().with_partition(vec![vec![0], vec![1, 2, 3]]).is_err());
        assert!(lin.with_partition(vec![vec![0, 1]]).is_err());
    }

    #[test]
    fn residual_h_at_zero_is_feasible_for_slack_row() {
        let lin = halfspace(vec![vec![0.5, 0.5]], vec![0.1]);
        let h = constraint_residual_h(&[0.0], &lin, &[0.3, 0.4], Bounds::UNIT, 1e12).unwrap();
        assert!(h[0] <= 0.0);
    }

    #[test]
    fn residual_h_large_c_limit() {
        let lin = halfspace(vec![vec![0.3, -0.7, 1.1]], vec![0.05]);
        let rho = [0.2, 0.5, 0.9];
        let y = [-0.4];
        let a = constraint_residual_h(&y, &lin, &rho, Bounds::UNIT, 1e12).unwrap();
        let b = constraint_residual_h(&y, &lin, &rho, Bounds::UNIT, 1e15).unwrap();
        assert!((a[0] - b[0]).abs() <= y[0].abs() * 1e-12);
    }

    #[test]
    fn residual_h_jacobian_matches_finite_differences() {
        // J_h = A D Aᵀ + I/C, D the indicator of unclipped coordinates.
        let rows = vec![
            vec![0.4, -0.2, 0.9, 0.1, 0.6],
            vec![-0.3, 0.8, 0.2, 0.5, -0.1],
        ];
        let lin = halfspace(rows.clone(), vec![0.1, -0.2]);
        let rho = [0.5, 0.45, 0.6, 0.2, 0.7];
        let c = 10.0;
        let y = [-0.15, -0.35];
        let mut z = [0.0; 5];
        for (row, yj) in rows.iter().zip(y) {
            for i in 0..5 {
                z[i] += yj * row[i];
            }
        }
        let free: Vec<bool> = (0..5).map(|i| z[i] > -rho[i] && z[i] < 1.0 - rho[i]).collect();
        let step = 1e-7;
        for k in 0..2 {
            let mut yp = y;
            yp[k] += step;
            let mut ym = y;
            ym[k] -= step;
            let hp = constraint_residual_h(&yp, &lin, &rho, Bounds::UNIT, c).unwrap();
            let hm = constraint_residual_h(&ym, &lin, &rho, Bounds::UNIT, c).unwrap();
            for j in 0..2 {
                let fd = (hp[j] - hm[j]) / (2.0 * step);
                let mut jac: f64 = (0..5).filter(|&i| free[i]).map(|i| rows[j][i] * rows[k][i]).sum();
                if j == k {
                    jac += 1.0 / c;
                }
                assert!((fd - jac).abs() <= 1e-6 * jac.abs().max(1e-3), "({j},{k}) {fd} vs {jac}");
            }
        }
    }

    #[test]
    fn dispatch_by_structure() {
        let s = ProjectionSettings::default();
        let rho = [0.9, 0.8, 0.7, 0.6];
        let one = halfspace(vec![vec![0.25; 4]], vec![-0.1]);
        assert_eq!(project(&rho, &one, Bounds::UNIT, &s).unwrap().path, ProjectionPath::SingleBinary);
        let two = halfspace(vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.0, 0.0, 0.5, 0.5]], vec![-0.1, -0.1]);
        let indep = two.clone().with_partition(vec![vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(
            project(&rho, &indep, Bounds::UNIT, &s).unwrap().path,
            ProjectionPath::IndependentBinary
        );
        let coupled = halfspace(vec![vec![0.5, 0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5, 0.5]], vec![-0.2, -0.2]);
        assert_eq!(project(&rho, &coupled, Bounds::UNIT, &s).unwrap().path, ProjectionPath::Newton);
    }

    #[test]
    fn zero_gradient_violation_falls_back_to_slack_solution() {
        let lin = halfspace(vec![vec![0.0, 0.0]], vec![-0.1]);
        let r = project(&[0.5, 1.5], &lin, Bounds::UNIT, &ProjectionSettings::default()).unwrap();
        assert_eq!(r.path, ProjectionPath::Newton);
        assert_eq!(r.delta, vec![0.0, -0.5]);
        assert!((r.slacks[0] - 0.1).abs() < 1e-9);
    }
}
