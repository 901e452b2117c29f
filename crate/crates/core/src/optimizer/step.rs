use super::{norm, PgdSettings};
use crate::projection::dot;

/// Barzilai–Borwein step from `s = ρ_t − ρ_{t−1}` and `y = ∇f_t − ∇f_{t−1}`,
/// capped by `2‖s‖/‖y‖` and `alpha_max`.
pub fn spectral_step_size(s: &[f64], y: &[f64], settings: &PgdSettings) -> f64 {
    let y_norm = norm(y);
    if y_norm == 0.0 {
        return settings.alpha_max;
    }
    let s_norm = norm(s);
    let sy = dot(s, y);
    if sy <= settings.eps_alpha {
        (s_norm / y_norm).min(settings.alpha_max)
    } else {
        (dot(s, s) / sy).min(2.0 * s_norm / y_norm).min(settings.alpha_max)
    }
}

/// `min(alpha_max, alpha_fallback / ‖∇f‖_∞)`; moves no entry by more than
/// `alpha_fallback` in a plain gradient step.
pub fn fallback_step_size(grad: &[f64], settings: &PgdSettings) -> f64 {
    let g_inf = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    if g_inf == 0.0 {
        settings.alpha_max
    } else {
        (settings.alpha_fallback / g_inf).min(settings.alpha_max)
    }
}

/// Polak–Ribière direction with non-negative `β`, kept in ascent orientation:
/// `d_t = ∇f_t + β d_{t−1}`. Without history it is the gradient.
pub fn cg_direction(grad: &[f64], grad_prev: Option<&[f64]>, direction_prev: Option<&[f64]>) -> Vec<f64> {
    let (Some(gp), Some(dp)) = (grad_prev, direction_prev) else {
        return grad.to_vec();
    };
    let denom = dot(gp, gp);
    if denom == 0.0 {
        return grad.to_vec();
    }
    let num: f64 = grad.iter().zip(gp).map(|(g, p)| g * (g - p)).sum();
    let beta = (num / denom).max(0.0);
    grad.iter().zip(dp).map(|(g, d)| g + beta * d).collect()
}
