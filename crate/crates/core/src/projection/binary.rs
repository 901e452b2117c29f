use super::{clip_step, delta_of_y, Bounds, ConstraintLinearization, ProjectionPath, ProjectionResult};
use crate::error::{Error, Result};

/// Halving cap; reached only with non-finite inputs.
const MAX_HALVINGS: usize = 200;
/// Gradient entries below this magnitude do not bound the dual bracket.
const GRAD_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum SearchStatus {
    /// `y = 0` already satisfies the constraint.
    Inactive,
    Converged,
    /// Even the most favourable clipped step leaves the row violated.
    Infeasible,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DualSearch {
    pub y: f64,
    pub iters: usize,
    pub status: SearchStatus,
}

/// Bisection for the dual of one row, restricted to `indices` when given.
///
/// The row residual `r(y) = Σ_i a_i clip(y a_i, l − ρ̃_i, u − ρ̃_i) − Ĝ` is
/// piecewise linear and non-decreasing in `y`, so the root is bracketed by
/// `[y_lower, 0]`, with `y_lower` the dual value at which every coordinate with
/// a nonzero gradient entry has reached a bound.
pub(crate) fn search_row(
    lin: &ConstraintLinearization,
    j: usize,
    rho_tilde: &[f64],
    bounds: Bounds,
    tol_b: f64,
    indices: Option<&[usize]>,
) -> Result<DualSearch> {
    let row = &lin.grad_g[j];
    let g_hat = lin.g_hat[j];
    let equality = lin.is_equality[j];

    let residual = |y: f64| -> f64 {
        let term = |i: usize| row[i] * clip_step(y * row[i], rho_tilde[i], bounds);
        match indices {
            Some(ix) => ix.iter().map(|&i| term(i)).sum::<f64>() - g_hat,
            None => (0..row.len()).map(term).sum::<f64>() - g_hat,
        }
    };

    let r0 = residual(0.0);
    if r0 <= 0.0 && (!equality || r0 == 0.0) {
        return Ok(DualSearch {
            y: 0.0,
            iters: 0,
            status: SearchStatus::Inactive,
        });
    }

    let mut y_lo = 0.0f64;
    let mut y_hi = 0.0f64;
    let mut any = false;
    let mut visit = |i: usize| {
        let a = row[i];
        if a.abs() >= GRAD_FLOOR {
            let p = (bounds.lower - rho_tilde[i]) / a;
            let q = (bounds.upper - rho_tilde[i]) / a;
            y_lo = y_lo.min(p.min(q));
            y_hi = y_hi.max(p.max(q));
            any = true;
        }
    };
    match indices {
        Some(ix) => ix.iter().for_each(|&i| visit(i)),
        None => (0..row.len()).for_each(visit),
    }
    if !any {
        return Err(Error::InfeasibleLinearization { row: j, residual: r0 });
    }

    // Equality rows with r(0) < 0 search upward instead.
    let (mut lo, mut hi) = if r0 > 0.0 { (y_lo, 0.0) } else { (0.0, y_hi) };
    let infeasible = if r0 > 0.0 {
        residual(lo) > 0.0
    } else {
        residual(hi) < 0.0
    };
    if infeasible {
        return Ok(DualSearch {
            y: if r0 > 0.0 { lo } else { hi },
            iters: 0,
            status: SearchStatus::Infeasible,
        });
    }

    let mut iters = 0;
    let mut mid = 0.5 * (lo + hi);
    while (hi - lo).abs() > tol_b && iters < MAX_HALVINGS {
        if residual(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = 0.5 * (lo + hi);
        iters += 1;
    }
    Ok(DualSearch {
        y: mid,
        iters,
        status: SearchStatus::Converged,
    })
}

fn row_outcome(lin: &ConstraintLinearization, j: usize, y: f64, delta: &[f64]) -> (f64, f64) {
    let r = lin.linear_residual(j, delta);
    let phi = if lin.is_equality[j] {
        r.abs()
    } else {
        (-y).min(-r).abs()
    };
    (phi, r.max(0.0))
}

/// Exact projection for a single linearized constraint.
pub fn project_single_binary_search(
    rho_tilde: &[f64],
    lin: &ConstraintLinearization,
    bounds: Bounds,
    tol_b: f64,
) -> Result<ProjectionResult> {
    lin.check_dims(rho_tilde)?;
    if lin.m() != 1 {
        return Err(Error::Domain(format!(
            "single-constraint search given {} constraints",
            lin.m()
        )));
    }
    let search = search_row(lin, 0, rho_tilde, bounds, tol_b, None)?;
    let y = vec![search.y];
    let delta = delta_of_y(&y, lin, rho_tilde, bounds);
    let (residual, slack) = row_outcome(lin, 0, search.y, &delta);
    Ok(ProjectionResult {
        delta,
        y,
        slacks: vec![slack],
        path: ProjectionPath::SingleBinary,
        newton_iters: 0,
        binary_iters: search.iters,
        residual,
        converged: search.status != SearchStatus::Infeasible,
    })
}

/// One bisection per constraint over its own variable block. Variables outside
/// every block are only clipped to the box.
pub fn project_independent(
    rho_tilde: &[f64],
    lin: &ConstraintLinearization,
    bounds: Bounds,
    tol_b: f64,
) -> Result<ProjectionResult> {
    lin.check_dims(rho_tilde)?;
    let partition = lin
        .independence_partition
        .as_ref()
        .ok_or_else(|| Error::Domain("independent projection needs a variable partition".into()))?;
    if partition.len() != lin.m() {
        return Err(Error::Domain("partition does not match constraint count".into()));
    }

    let mut delta: Vec<f64> = rho_tilde.iter().map(|&r| clip_step(0.0, r, bounds)).collect();
    let mut y = vec![0.0; lin.m()];
    let mut slacks = vec![0.0; lin.m()];
    let mut iters = 0;
    let mut residual = 0.0f64;
    let mut converged = true;
    for (j, block) in partition.iter().enumerate() {
        let search = search_row(lin, j, rho_tilde, bounds, tol_b, Some(block))?;
        iters += search.iters;
        converged &= search.status != SearchStatus::Infeasible;
        y[j] = search.y;
        let row = &lin.grad_g[j];
        for &i in block {
            delta[i] = clip_step(search.y * row[i], rho_tilde[i], bounds);
        }
        let r: f64 = block.iter().map(|&i| row[i] * delta[i]).sum::<f64>() - lin.g_hat[j];
        let phi = if lin.is_equality[j] {
            r.abs()
        } else {
            (-search.y).min(-r).abs()
        };
        residual = residual.max(phi);
        slacks[j] = r.max(0.0);
    }
    Ok(ProjectionResult {
        delta,
        y,
        slacks,
        path: ProjectionPath::IndependentBinary,
        newton_iters: 0,
        binary_iters: iters,
        residual,
        converged,
    })
}
