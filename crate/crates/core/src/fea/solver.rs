//! Linear solvers for the reduced (free-DOF) stiffness system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CONDITIONING_HINT: &str =
    "check that fixed DOFs remove all rigid-body modes and that e_min > 0";

/// Reduced systems smaller than this are solved densely by `SolverKind::Auto`.
pub const DENSE_DOF_LIMIT: usize = 200;
/// Largest band storage (entries) `SolverKind::Auto` will allocate before switching to PCG.
pub const BAND_ENTRY_LIMIT: usize = 24_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Dense below `DENSE_DOF_LIMIT`, banded Cholesky while the band fits
    /// `BAND_ENTRY_LIMIT`, otherwise Jacobi-preconditioned CG.
    #[default]
    Auto,
    Dense,
    Banded,
    Pcg,
}

/// Symmetric matrix in compressed sparse row form (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match cols.binary_search(&c) {
            Ok(k) => self.values[self.row_ptr[r] + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *o = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .all(|k| self.get(self.col_idx[k], r) == self.values[k])
        })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Dense,
    Banded,
    Pcg,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub method: SolveMethod,
    /// CG iterations; zero for direct solves.
    pub iterations: usize,
}

/// Solves `a x = b` for a symmetric positive definite `a`.
///
/// `ordering[r]` is the elimination position of row `r` for the banded path; a
/// good ordering keeps coupled DOFs close together.
pub fn solve_spd(
    a: &CsrMatrix,
    b: &[f64],
    ordering: &[usize],
    kind: SolverKind,
    pcg_tol: f64,
) -> Result<SolveOutcome> {
    if b.iter().all(|&v| v == 0.0) {
        return Ok(SolveOutcome {
            x: vec![0.0; a.n],
            method: SolveMethod::Dense,
            iterations: 0,
        });
    }
    let method = match kind {
        SolverKind::Dense => SolveMethod::Dense,
        SolverKind::Banded => SolveMethod::Banded,
        SolverKind::Pcg => SolveMethod::Pcg,
        SolverKind::Auto => {
            if a.n < DENSE_DOF_LIMIT {
                SolveMethod::Dense
            } else if a.n * (half_bandwidth(a, ordering) + 1) <= BAND_ENTRY_LIMIT {
                SolveMethod::Banded
            } else {
                SolveMethod::Pcg
            }
        }
    };
    match method {
        SolveMethod::Dense => dense_cholesky(a, b).map(|x| SolveOutcome {
            x,
            method,
            iterations: 0,
        }),
        SolveMethod::Banded => BandedCholesky::factor(a, ordering).map(|f| SolveOutcome {
            x: f.solve(b),
            method,
            iterations: 0,
        }),
        SolveMethod::Pcg => pcg(a, b, pcg_tol, 10 * a.n).map(|(x, iterations)| SolveOutcome {
            x,
            method,
            iterations,
        }),
    }
}

fn dense_cholesky(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let chol = a.to_dense().cholesky().ok_or_else(|| Error::SingularSystem {
        reason: "dense Cholesky found a non-positive pivot".into(),
        hint: CONDITIONING_HINT,
    })?;
    Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
}

pub fn half_bandwidth(a: &CsrMatrix, ordering: &[usize]) -> usize {
    let mut bw = 0;
    for r in 0..a.n {
        for &c in &a.col_idx[a.row_ptr[r]..a.row_ptr[r + 1]] {
            bw = bw.max(ordering[r].abs_diff(ordering[c]));
        }
    }
    bw
}

/// Lower-triangular band Cholesky factor. Row `i` stores columns
/// `i - bw ..= i` contiguously.
struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
    ordering: Vec<usize>,
}

impl BandedCholesky {
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    fn factor(a: &CsrMatrix, ordering: &[usize]) -> Result<Self> {
        let n = a.n;
        let bw = half_bandwidth(a, ordering);
        let mut f = BandedCholesky {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
            ordering: ordering.to_vec(),
        };
        for r in 0..n {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                let (i, j) = (ordering[r], ordering[a.col_idx[k]]);
                if j <= i {
                    let at = f.idx(i, j);
                    f.band[at] = a.values[k];
                }
            }
        }
        let w = bw + 1;
        for j in 0..n {
            let start = j.saturating_sub(bw);
            let row_j = j * w + (bw + start - j)..j * w + bw;
            let s = f.band[j * w + bw] - f.band[row_j.clone()].iter().map(|v| v * v).sum::<f64>();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::SingularSystem {
                    reason: format!("banded Cholesky pivot {s:e} at position {j}"),
                    hint: CONDITIONING_HINT,
                });
            }
            let d = s.sqrt();
            f.band[j * w + bw] = d;
            for i in (j + 1)..n.min(j + bw + 1) {
                let lo = i.saturating_sub(bw).max(start);
                let mut acc = f.band[i * w + (j + bw - i)];
                let ri = i * w + (lo + bw - i);
                let rj = j * w + (lo + bw - j);
                let len = j - lo;
                for k in 0..len {
                    acc -= f.band[ri + k] * f.band[rj + k];
                }
                f.band[i * w + (j + bw - i)] = acc / d;
            }
        }
        Ok(f)
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw) = (self.n, self.bw);
        let mut z = vec![0.0; n];
        for (r, &p) in self.ordering.iter().enumerate() {
            z[p] = b[r];
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut acc = z[i];
            for j in lo..i {
                acc -= self.band[self.idx(i, j)] * z[j];
            }
            z[i] = acc / self.band[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let hi = n.min(i + bw + 1);
            let mut acc = z[i];
            for j in (i + 1)..hi {
                acc -= self.band[self.idx(j, i)] * z[j];
            }
            z[i] = acc / self.band[self.idx(i, i)];
        }
        self.ordering.iter().map(|&p| z[p]).collect()
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn pcg(a: &CsrMatrix, b: &[f64], rel_tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let b_norm = norm(b);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    // Stagnation: no new best residual over one restart-length window.
    let window = n.clamp(50, 2000);
    let mut best = f64::INFINITY;
    let mut best_at = 0;
    for it in 0..max_iter {
        let res = norm(&r) / b_norm;
        if res <= rel_tol {
            return Ok((x, it));
        }
        if res < best {
            best = res;
            best_at = it;
        } else if it - best_at > window {
            return Err(Error::SingularSystem {
                reason: format!("PCG stagnated at relative residual {best:e} after {it} iterations"),
                hint: CONDITIONING_HINT,
            });
        }
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::SingularSystem {
                reason: format!("PCG found non-positive curvature {pap:e}"),
                hint: CONDITIONING_HINT,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = norm(&r) / b_norm;
    if res <= rel_tol {
        Ok((x, max_iter))
    } else {
        Err(Error::SingularSystem {
            reason: format!("PCG reached {max_iter} iterations at relative residual {res:e}"),
            hint: CONDITIONING_HINT,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
