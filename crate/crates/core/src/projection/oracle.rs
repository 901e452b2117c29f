//! Brute-force projection by active-set enumeration. Exponential; for tests.

use nalgebra::{DMatrix, DVector};

use super::{Bounds, ConstraintLinearization};
use crate::error::{Error, Result};

pub const MAX_VARIABLES: usize = 12;
pub const MAX_CONSTRAINTS: usize = 3;

const KKT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Lower,
    Upper,
    Free,
}

/// Exact `argmin ½‖δ‖²` over the box and the linearized rows, or `None` when
/// the set is empty. Every box pattern and every set of active rows is tried;
/// candidates that satisfy the KKT sign conditions are kept and the one with
/// the smallest norm is returned.
pub fn reference_projection_oracle(
    rho_tilde: &[f64],
    lin: &ConstraintLinearization,
    bounds: Bounds,
) -> Result<Option<Vec<f64>>> {
    let n = rho_tilde.len();
    let m = lin.m();
    if n != lin.n() {
        return Err(Error::Domain("design length does not match linearization".into()));
    }
    if n > MAX_VARIABLES || m > MAX_CONSTRAINTS {
        return Err(Error::Unsupported(format!(
            "enumeration limited to N ≤ {MAX_VARIABLES}, m ≤ {MAX_CONSTRAINTS}; got N = {n}, m = {m}"
        )));
    }
    let lo: Vec<f64> = rho_tilde.iter().map(|r| bounds.lower - r).collect();
    let hi: Vec<f64> = rho_tilde.iter().map(|r| bounds.upper - r).collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pattern = vec![Side::Lower; n];
    let box_count = 3usize.pow(n as u32);
    for code in 0..box_count {
        let mut c = code;
        for p in pattern.iter_mut() {
            *p = [Side::Lower, Side::Upper, Side::Free][c % 3];
            c /= 3;
        }
        for mask in 0..(1usize << m) {
            // Equality rows are always active.
            if (0..m).any(|j| lin.is_equality[j] && mask & (1 << j) == 0) {
                continue;
            }
            let active: Vec<usize> = (0..m).filter(|&j| mask & (1 << j) != 0).collect();
            if let Some(delta) = candidate(&pattern, &active, lin, &lo, &hi) {
                let norm: f64 = delta.iter().map(|d| d * d).sum();
                if best.as_ref().map_or(true, |(b, _)| norm < *b) {
                    best = Some((norm, delta));
                }
            }
        }
    }
    Ok(best.map(|(_, d)| d))
}

fn candidate(
    pattern: &[Side],
    active: &[usize],
    lin: &ConstraintLinearization,
    lo: &[f64],
    hi: &[f64],
) -> Option<Vec<f64>> {
    let n = pattern.len();
    let k = active.len();
    let mut delta: Vec<f64> = (0..n)
        .map(|i| match pattern[i] {
            Side::Lower => lo[i],
            Side::Upper => hi[i],
            Side::Free => 0.0,
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == Side::Free).collect();

    // Active rows: Σ_l (A_F A_Fᵀ)_{jl} y_l = Ĝ_j − a_{j,B}ᵀ δ_B.
    let mut y = vec![0.0; lin.m()];
    if k > 0 {
        let gram = DMatrix::from_fn(k, k, |a, b| {
            free.iter()
                .map(|&i| lin.grad_g[active[a]][i] * lin.grad_g[active[b]][i])
                .sum()
        });
        let rhs = DVector::from_fn(k, |a, _| {
            let row = &lin.grad_g[active[a]];
            let fixed: f64 = (0..n).filter(|&i| pattern[i] != Side::Free).map(|i| row[i] * delta[i]).sum();
            lin.g_hat[active[a]] - fixed
        });
        let sol = gram.clone().svd(true, true).solve(&rhs, 1e-14).ok()?;
        if (&gram * &sol - &rhs).amax() > KKT_TOL {
            return None;
        }
        for (a, &j) in active.iter().enumerate() {
            y[j] = sol[a];
        }
    }
    let z: Vec<f64> = (0..n)
        .map(|i| (0..lin.m()).map(|j| y[j] * lin.grad_g[j][i]).sum())
        .collect();
    for &i in &free {
        delta[i] = z[i];
    }

    let scale = |v: f64| KKT_TOL * (1.0 + v.abs());
    for i in 0..n {
        let ok = match pattern[i] {
            Side::Free => delta[i] >= lo[i] - scale(lo[i]) && delta[i] <= hi[i] + scale(hi[i]),
            Side::Lower => z[i] <= lo[i] + scale(lo[i]),
            Side::Upper => z[i] >= hi[i] - scale(hi[i]),
        };
        if !ok {
            return None;
        }
    }
    for j in 0..lin.m() {
        let r = lin.linear_residual(j, &delta);
        let is_active = active.contains(&j);
        if is_active && !lin.is_equality[j] && y[j] > KKT_TOL {
            return None;
        }
        if !is_active && r > scale(lin.g_hat[j]) {
            return None;
        }
        if is_active && r.abs() > scale(lin.g_hat[j]) {
            return None;
        }
    }
    Some(delta.iter().zip(lo.iter().zip(hi)).map(|(d, (l, h))| d.clamp(*l, *h)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(rows: Vec<Vec<f64>>, rhs: Vec<f64>) -> ConstraintLinearization {
        ConstraintLinearization::from_halfspaces(rows, rhs).unwrap()
    }

    #[test]
    fn halfspace_example() {
        let l = lin(vec![vec![0.5, 0.5]], vec![-0.2]);
        let d = reference_projection_oracle(&[0.8, 0.6], &l, Bounds::UNIT).unwrap().unwrap();
        assert!((d[0] + 0.2).abs() < 1e-12 && (d[1] + 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_flagged() {
        let l = lin(vec![vec![1.0], vec![-1.0]], vec![-0.2, -0.1]);
        assert_eq!(reference_projection_oracle(&[0.5], &l, Bounds::UNIT).unwrap(), None);
    }

    #[test]
    fn projection_is_idempotent() {
        let l = lin(vec![vec![0.3, 0.9, -0.2], vec![0.5, 0.1, 0.4]], vec![-0.3, 0.05]);
        let rho = [0.7, 1.2, -0.1];
        let d = reference_projection_oracle(&rho, &l, Bounds::UNIT).unwrap().unwrap();
        let moved: Vec<f64> = rho.iter().zip(&d).map(|(r, d)| r + d).collect();
        // Re-linearize at the projected point: same rows, rhs shifted by aᵀδ.
        let rhs: Vec<f64> = (0..2).map(|j| l.g_hat[j] - l.grad_g[j].iter().zip(&d).map(|(a, b)| a * b).sum::<f64>()).collect();
        let again = reference_projection_oracle(&moved, &lin(l.grad_g.clone(), rhs), Bounds::UNIT)
            .unwrap()
            .unwrap();
        assert!(again.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn box_only_is_clip() {
        let l = lin(vec![vec![1.0, 1.0]], vec![10.0]);
        let d = reference_projection_oracle(&[-0.5, 1.5], &l, Bounds::UNIT).unwrap().unwrap();
        assert_eq!(d, vec![0.5, -0.5]);
    }

    #[test]
    fn refuses_large_instances() {
        let l = lin(vec![vec![1.0; 13]], vec![0.0]);
        assert!(matches!(
            reference_projection_oracle(&[0.5; 13], &l, Bounds::UNIT),
            Err(Error::Unsupported(_))
        ));
    }
}
