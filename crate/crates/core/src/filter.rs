//! Linear density filter with cone (hat) weights.

use crate::error::{Error, Result};
use crate::fea::StructuredGrid;

/// Row-normalized filter matrix `W` stored sparsely, together with its transpose.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterKernel {
    pub radius: f64,
    n: usize,
    rows: Sparse,
    cols: Sparse,
}

#[derive(Debug, Clone, PartialEq)]
struct Sparse {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
}

impl Sparse {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = (self.ptr[r]..self.ptr[r + 1])
                .map(|k| self.val[k] * x[self.idx[k]])
                .sum();
        }
    }
}

/// `W_ei = max(0, r − d(e, i)) / Σ_k max(0, r − d(e, k))`, with distances
/// between element centroids measured in element units.
pub fn build_filter(grid: &StructuredGrid, radius: f64) -> Result<FilterKernel> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::parameter("filter_radius", format!("{radius} must be positive")));
    }
    let n = grid.element_count();
    let reach = radius.ceil() as isize;
    let mut rows = Sparse {
        ptr: vec![0],
        idx: Vec::new(),
        val: Vec::new(),
    };
    for e in 0..n {
        let (ix, iy) = grid.element_coords(e);
        let start = rows.idx.len();
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (jx, jy) = (ix as isize + dx, iy as isize + dy);
                if jx < 0 || jy < 0 || jx >= grid.nx as isize || jy >= grid.ny as isize {
                    continue;
                }
                let w = radius - ((dx * dx + dy * dy) as f64).sqrt();
                if w > 0.0 {
                    rows.idx.push(grid.element_index(jx as usize, jy as usize));
                    rows.val.push(w);
                }
            }
        }
        let total: f64 = rows.val[start..].iter().sum();
        for v in &mut rows.val[start..] {
            *v /= total;
        }
        rows.ptr.push(rows.idx.len());
    }
    let cols = transpose(&rows, n);
    Ok(FilterKernel {
        radius,
        n,
        rows,
        cols,
    })
}

fn transpose(m: &Sparse, n: usize) -> Sparse {
    let mut count = vec![0usize; n + 1];
    for &c in &m.idx {
        count[c + 1] += 1;
    }
    for i in 0..n {
        count[i + 1] += count[i];
    }
    let mut next = count.clone();
    let mut idx = vec![0; m.idx.len()];
    let mut val = vec![0.0; m.val.len()];
    // Rows visited in increasing order, so each column's entries stay sorted.
    for r in 0..n {
        for k in m.ptr[r]..m.ptr[r + 1] {
            let c = m.idx[k];
            idx[next[c]] = r;
            val[next[c]] = m.val[k];
            next[c] += 1;
        }
    }
    Sparse {
        ptr: count,
        idx,
        val,
    }
}

impl FilterKernel {
    pub fn identity(n: usize) -> Self {
        let s = Sparse {
            ptr: (0..=n).collect(),
            idx: (0..n).collect(),
            val: vec![1.0; n],
        };
        FilterKernel {
            radius: 0.0,
            n,
            rows: s.clone(),
            cols: s,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// `(column, weight)` pairs of row `e`.
    pub fn row(&self, e: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.rows.ptr[e]..self.rows.ptr[e + 1]).map(move |k| (self.rows.idx[k], self.rows.val[k]))
    }

    /// Column sums of `W`, i.e. `Wᵀ·1`.
    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|c| self.cols.val[self.cols.ptr[c]..self.cols.ptr[c + 1]].iter().sum())
            .collect()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::Domain(format!(
                "filter expects {} values, got {len}",
                self.n
            )));
        }
        Ok(())
    }

    /// `W · raw`, applied independently to every length-`N` channel of `raw`.
    pub fn apply(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.apply_channels(raw, &self.rows)
    }

    /// `Wᵀ · grad`, per channel.
    pub fn chain_rule(&self, grad_wrt_filtered: &[f64]) -> Result<Vec<f64>> {
        self.apply_channels(grad_wrt_filtered, &self.cols)
    }

    fn apply_channels(&self, x: &[f64], m: &Sparse) -> Result<Vec<f64>> {
        if self.n == 0 || x.len() % self.n != 0 {
            return Err(Error::Domain(format!(
                "filter expects a multiple of {} values, got {}",
                self.n,
                x.len()
            )));
        }
        let mut out = vec![0.0; x.len()];
        for (xc, oc) in x.chunks(self.n).zip(out.chunks_mut(self.n)) {
            m.apply(xc, oc);
        }
        Ok(out)
    }
}

pub fn apply_filter(kernel: &FilterKernel, raw: &[f64]) -> Result<Vec<f64>> {
    kernel.check(raw.len())?;
    kernel.apply(raw)
}

pub fn filter_chain_rule(kernel: &FilterKernel, grad_wrt_filtered: &[f64]) -> Result<Vec<f64>> {
    kernel.check(grad_wrt_filtered.len())?;
    kernel.chain_rule(grad_wrt_filtered)
}
