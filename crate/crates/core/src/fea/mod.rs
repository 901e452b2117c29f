//! Structured-grid 2-D linear elasticity with SIMP stiffness interpolation.
//!
//! Elements and nodes are numbered row-major: element `(ix, iy)` has index
//! `iy * nx + ix`, node `(ix, iy)` has index `iy * (nx + 1) + ix`, and node
//! `n` owns DOFs `2n` (x) and `2n + 1` (y). The y-axis points up.

mod element;
mod solver;

use serde::{Deserialize, Serialize};

pub use element::element_stiffness_q4;
pub use solver::{
    half_bandwidth, pcg, solve_spd, CsrMatrix, SolveMethod, SolverKind, BAND_ENTRY_LIMIT,
    DENSE_DOF_LIMIT,
};

use crate::error::{Error, Result};

/// Relative residual target for the iterative solver.
pub const SOLVER_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuredGrid {
    pub nx: usize,
    pub ny: usize,
    pub element_size: f64,
}

impl StructuredGrid {
    pub fn new(nx: usize, ny: usize, element_size: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::parameter("grid", format!("{nx}x{ny} has no elements")));
        }
        if !(element_size > 0.0 && element_size.is_finite()) {
            return Err(Error::parameter(
                "element_size",
                format!("{element_size} must be positive"),
            ));
        }
        Ok(StructuredGrid {
            nx,
            ny,
            element_size,
        })
    }

    /// Grid whose x-extent is 1.0, the unit used by the center-of-mass targets.
    pub fn unit_width(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, 1.0 / nx.max(1) as f64)
    }

    pub fn element_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn dof_count(&self) -> usize {
        2 * self.node_count()
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    pub fn element_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn element_coords(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    /// Counter-clockwise from the lower-left corner.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (ix, iy) = self.element_coords(e);
        [
            self.node_index(ix, iy),
            self.node_index(ix + 1, iy),
            self.node_index(ix + 1, iy + 1),
            self.node_index(ix, iy + 1),
        ]
    }

    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let nodes = self.element_nodes(e);
        let mut dofs = [0; 8];
        for (a, n) in nodes.iter().enumerate() {
            dofs[2 * a] = 2 * n;
            dofs[2 * a + 1] = 2 * n + 1;
        }
        dofs
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let (ix, iy) = self.element_coords(e);
        [
            (ix as f64 + 0.5) * self.element_size,
            (iy as f64 + 0.5) * self.element_size,
        ]
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.element_size
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.element_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    /// Sorted, deduplicated.
    pub fixed_dofs: Vec<usize>,
    /// Sorted by DOF, one entry per loaded DOF.
    pub loads: Vec<(usize, f64)>,
}

impl BoundaryConditions {
    pub fn new(
        grid: &StructuredGrid,
        mut fixed_dofs: Vec<usize>,
        loads: Vec<(usize, f64)>,
    ) -> Result<Self> {
        fixed_dofs.sort_unstable();
        fixed_dofs.dedup();
        if fixed_dofs.is_empty() {
            return Err(Error::Domain("no fixed DOFs; stiffness would be singular".into()));
        }
        let ndof = grid.dof_count();
        if let Some(&d) = fixed_dofs.iter().find(|&&d| d >= ndof) {
            return Err(Error::Domain(format!("fixed DOF {d} outside grid ({ndof} DOFs)")));
        }
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(loads.len());
        let mut loads = loads;
        loads.sort_by_key(|&(d, _)| d);
        for (d, f) in loads {
            if d >= ndof {
                return Err(Error::Domain(format!("load DOF {d} outside grid ({ndof} DOFs)")));
            }
            if fixed_dofs.binary_search(&d).is_ok() {
                return Err(Error::Domain(format!("load applied on fixed DOF {d}")));
            }
            match merged.last_mut() {
                Some(last) if last.0 == d => last.1 += f,
                _ => merged.push((d, f)),
            }
        }
        Ok(BoundaryConditions {
            fixed_dofs,
            loads: merged,
        })
    }

    /// Left edge clamped, downward load of `magnitude` at the middle of the
    /// right edge. With an odd number of element rows the load is split evenly
    /// between the two nodes closest to mid-height.
    pub fn cantilever(grid: &StructuredGrid, magnitude: f64) -> Result<Self> {
        let fixed = (0..=grid.ny)
            .flat_map(|iy| {
                let n = grid.node_index(0, iy);
                [2 * n, 2 * n + 1]
            })
            .collect();
        let mid = grid.ny / 2;
        let loads = if grid.ny % 2 == 0 {
            vec![(2 * grid.node_index(grid.nx, mid) + 1, -magnitude)]
        } else {
            vec![
                (2 * grid.node_index(grid.nx, mid) + 1, -magnitude / 2.0),
                (2 * grid.node_index(grid.nx, mid + 1) + 1, -magnitude / 2.0),
            ]
        };
        Self::new(grid, fixed, loads)
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed_dofs.binary_search(&dof).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub young_moduli: Vec<f64>,
    pub e_min: f64,
    pub poisson: f64,
    pub penalty: f64,
}

impl MaterialModel {
    pub fn new(young_moduli: Vec<f64>, e_min: f64, poisson: f64, penalty: f64) -> Result<Self> {
        if young_moduli.is_empty() {
            return Err(Error::parameter("young_moduli", "at least one material required"));
        }
        if !(e_min > 0.0) {
            return Err(Error::parameter("e_min", format!("{e_min} must be positive")));
        }
        if let Some(e) = young_moduli.iter().find(|&&e| !(e > e_min)) {
            return Err(Error::parameter(
                "young_moduli",
                format!("modulus {e} must exceed e_min {e_min}"),
            ));
        }
        if !(poisson > 0.0 && poisson < 0.5) {
            return Err(Error::parameter("poisson", format!("{poisson} not in (0, 0.5)")));
        }
        if !(penalty >= 1.0) {
            return Err(Error::parameter("penalty", format!("{penalty} must be >= 1")));
        }
        Ok(MaterialModel {
            young_moduli,
            e_min,
            poisson,
            penalty,
        })
    }

    /// `e_min = 1e-9 · max(E)`.
    pub fn with_default_floor(young_moduli: Vec<f64>, poisson: f64, penalty: f64) -> Result<Self> {
        let e_max = young_moduli.iter().copied().fold(0.0, f64::max);
        Self::new(young_moduli, 1e-9 * e_max, poisson, penalty)
    }

    pub fn material_count(&self) -> usize {
        self.young_moduli.len()
    }
}

/// Element moduli and their partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    /// One modulus per element.
    pub modulus: Vec<f64>,
    /// `∂E_e/∂ρ_{e,j}`, channel-major like the densities.
    pub derivative: Vec<f64>,
}

/// Additive penalized mixture `E_e = e_min + Σ_j ρ_{e,j}^p (E_j − e_min)`.
///
/// `densities` is channel-major: material `j` occupies
/// `densities[j * n_elements..(j + 1) * n_elements]`.
pub fn interpolate_stiffness(
    densities: &[f64],
    n_elements: usize,
    model: &MaterialModel,
) -> Result<Interpolation> {
    let k = model.material_count();
    if densities.len() != n_elements * k {
        return Err(Error::Domain(format!(
            "expected {} densities ({} elements x {} materials), got {}",
            n_elements * k,
            n_elements,
            k,
            densities.len()
        )));
    }
    const SLACK: f64 = 1e-12;
    if let Some((i, v)) = densities
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v >= -SLACK && v <= 1.0 + SLACK))
    {
        return Err(Error::Domain(format!("density {v} at index {i} outside [0, 1]")));
    }
    let p = model.penalty;
    let mut modulus = vec![model.e_min; n_elements];
    let mut derivative = vec![0.0; densities.len()];
    for (j, &e_j) in model.young_moduli.iter().enumerate() {
        let scale = e_j - model.e_min;
        let block = j * n_elements..(j + 1) * n_elements;
        for (e, &rho) in densities[block.clone()].iter().enumerate() {
            let rho = rho.clamp(0.0, 1.0);
            modulus[e] += rho.powf(p) * scale;
            derivative[block.start + e] = p * rho.powf(p - 1.0) * scale;
        }
    }
    Ok(Interpolation {
        modulus,
        derivative,
    })
}

/// Solved free-DOF elasticity system.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    /// Reduced stiffness over `free_dofs`.
    pub stiffness: CsrMatrix,
    /// Reduced load vector.
    pub rhs: Vec<f64>,
    /// Full-length displacement vector; zero on fixed DOFs.
    pub solution: Vec<f64>,
    pub free_dofs: Vec<usize>,
    pub method: SolveMethod,
    pub iterations: usize,
}

impl LinearSystem {
    pub fn relative_residual(&self) -> f64 {
        let u: Vec<f64> = self.free_dofs.iter().map(|&d| self.solution[d]).collect();
        let mut ku = vec![0.0; u.len()];
        self.stiffness.mul_vec(&u, &mut ku);
        let num: f64 = ku
            .iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = solver::norm(&self.rhs);
        if den == 0.0 {
            num
        } else {
            num / den
        }
    }
}

/// Grid, supports and element matrix with the reduced sparsity pattern and
/// scatter map precomputed, so repeated solves only refill values.
#[derive(Debug, Clone)]
pub struct FeaModel {
    grid: StructuredGrid,
    bc: BoundaryConditions,
    k0: [[f64; 8]; 8],
    free_dofs: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// Per element, the CSR slot of each of the 64 local entries (`usize::MAX` if fixed).
    scatter: Vec<[usize; 64]>,
    /// Elimination order for the banded solver: sweeps along the shorter axis.
    ordering: Vec<usize>,
    rhs: Vec<f64>,
    pub solver: SolverKind,
}

impl FeaModel {
    pub fn new(grid: StructuredGrid, bc: BoundaryConditions, poisson: f64) -> Result<Self> {
        let k0 = element_stiffness_q4(poisson, grid.element_size)?;
        let ndof = grid.dof_count();
        if bc.fixed_dofs.iter().any(|&d| d >= ndof) || bc.loads.iter().any(|&(d, _)| d >= ndof) {
            return Err(Error::Domain("boundary conditions do not match grid".into()));
        }
        let mut reduced = vec![usize::MAX; ndof];
        let free_dofs: Vec<usize> = (0..ndof).filter(|&d| !bc.is_fixed(d)).collect();
        for (r, &d) in free_dofs.iter().enumerate() {
            reduced[d] = r;
        }

        let nfree = free_dofs.len();
        let mut rows: Vec<Vec<usize>> = vec![Vec::with_capacity(18); nfree];
        for e in 0..grid.element_count() {
            let dofs = grid.element_dofs(e);
            for &a in &dofs {
                let ra = reduced[a];
                if ra == usize::MAX {
                    continue;
                }
                rows[ra].extend(dofs.iter().map(|&b| reduced[b]).filter(|&rb| rb != usize::MAX));
            }
        }
        let mut row_ptr = Vec::with_capacity(nfree + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }

        let scatter = (0..grid.element_count())
            .map(|e| {
                let dofs = grid.element_dofs(e);
                let mut slots = [usize::MAX; 64];
                for a in 0..8 {
                    let ra = reduced[dofs[a]];
                    if ra == usize::MAX {
                        continue;
                    }
                    let cols = &col_idx[row_ptr[ra]..row_ptr[ra + 1]];
                    for b in 0..8 {
                        let rb = reduced[dofs[b]];
                        if rb != usize::MAX {
                            let k = cols.binary_search(&rb).expect("pattern covers element");
                            slots[a * 8 + b] = row_ptr[ra] + k;
                        }
                    }
                }
                slots
            })
            .collect();

        // Node rank with the shorter axis varying fastest.
        let node_rank = |n: usize| -> usize {
            let (ix, iy) = (n % (grid.nx + 1), n / (grid.nx + 1));
            if grid.nx >= grid.ny {
                ix * (grid.ny + 1) + iy
            } else {
                n
            }
        };
        let mut by_rank: Vec<usize> = (0..nfree).collect();
        by_rank.sort_by_key(|&r| {
            let d = free_dofs[r];
            (node_rank(d / 2), d % 2)
        });
        let mut ordering = vec![0; nfree];
        for (pos, &r) in by_rank.iter().enumerate() {
            ordering[r] = pos;
        }

        let mut rhs = vec![0.0; nfree];
        for &(d, f) in &bc.loads {
            rhs[reduced[d]] = f;
        }

        Ok(FeaModel {
            grid,
            bc,
            k0,
            free_dofs,
            row_ptr,
            col_idx,
            scatter,
            ordering,
            rhs,
            solver: SolverKind::Auto,
        })
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn boundary_conditions(&self) -> &BoundaryConditions {
        &self.bc
    }

    pub fn unit_element_matrix(&self) -> &[[f64; 8]; 8] {
        &self.k0
    }

    pub fn free_dofs(&self) -> &[usize] {
        &self.free_dofs
    }

    /// Full-length load vector.
    pub fn load_vector(&self) -> Vec<f64> {
        let mut f = vec![0.0; self.grid.dof_count()];
        for &(d, v) in &self.bc.loads {
            f[d] = v;
        }
        f
    }

    /// Reduced stiffness for the given element moduli, assembled in element order.
    pub fn assemble(&self, element_moduli: &[f64]) -> Result<CsrMatrix> {
        if element_moduli.len() != self.grid.element_count() {
            return Err(Error::Domain(format!(
                "expected {} element moduli, got {}",
                self.grid.element_count(),
                element_moduli.len()
            )));
        }
        let mut values = vec![0.0; self.col_idx.len()];
        for (slots, &modulus) in self.scatter.iter().zip(element_moduli) {
            for (k, &slot) in slots.iter().enumerate() {
                if slot != usize::MAX {
                    values[slot] += modulus * self.k0[k / 8][k % 8];
                }
            }
        }
        Ok(CsrMatrix {
            n: self.free_dofs.len(),
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        })
    }

    pub fn solve(&self, element_moduli: &[f64]) -> Result<LinearSystem> {
        let stiffness = self.assemble(element_moduli)?;
        let outcome = solve_spd(
            &stiffness,
            &self.rhs,
            &self.ordering,
            self.solver,
            SOLVER_TOLERANCE,
        )?;
        let mut solution = vec![0.0; self.grid.dof_count()];
        for (&d, &v) in self.free_dofs.iter().zip(&outcome.x) {
            solution[d] = v;
        }
        Ok(LinearSystem {
            stiffness,
            rhs: self.rhs.clone(),
            solution,
            free_dofs: self.free_dofs.clone(),
            method: outcome.method,
            iterations: outcome.iterations,
        })
    }

    /// Per-element strain energy density at unit modulus, `u_eᵀ k₀ u_e`.
    pub fn element_energies(&self, u: &[f64]) -> Vec<f64> {
        (0..self.grid.element_count())
            .map(|e| {
                let dofs = self.grid.element_dofs(e);
                let ue: [f64; 8] = std::array::from_fn(|a| u[dofs[a]]);
                let mut acc = 0.0;
                for a in 0..8 {
                    let row: f64 = (0..8).map(|b| self.k0[a][b] * ue[b]).sum();
                    acc += ue[a] * row;
                }
                acc
            })
            .collect()
    }

    /// Compliance `fᵀu` and its gradient with respect to the (physical)
    /// densities, channel-major.
    pub fn compliance_and_gradient(
        &self,
        densities: &[f64],
        material: &MaterialModel,
    ) -> Result<ComplianceEvaluation> {
        let n = self.grid.element_count();
        let interp = interpolate_stiffness(densities, n, material)?;
        let system = self.solve(&interp.modulus)?;
        let compliance: f64 = self
            .bc
            .loads
            .iter()
            .map(|&(d, f)| f * system.solution[d])
            .sum();
        let energies = self.element_energies(&system.solution);
        let gradient = interp
            .derivative
            .iter()
            .enumerate()
            .map(|(i, &de)| -de * energies[i % n])
            .collect();
        Ok(ComplianceEvaluation {
            compliance,
            gradient,
            system,
        })
    }
}

#[derive(Debug, Clone)]
pub struct ComplianceEvaluation {
    pub compliance: f64,
    pub gradient: Vec<f64>,
    pub system: LinearSystem,
}

pub fn assemble_and_solve(
    grid: &StructuredGrid,
    bc: &BoundaryConditions,
    element_moduli: &[f64],
    poisson: f64,
) -> Result<LinearSystem> {
    FeaModel::new(*grid, bc.clone(), poisson)?.solve(element_moduli)
}

pub fn compliance_and_gradient(
    grid: &StructuredGrid,
    bc: &BoundaryConditions,
    densities: &[f64],
    model: &MaterialModel,
) -> Result<(f64, Vec<f64>)> {
    let eval = FeaModel::new(*grid, bc.clone(), model.poisson)?
        .compliance_and_gradient(densities, model)?;
    Ok((eval.compliance, eval.gradient))
}
