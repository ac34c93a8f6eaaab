//! Lowest-order Raviart-Thomas / piecewise-constant matrices on the fine grid.
//!
//! A velocity DOF is the (constant) normal component on an edge, so the basis
//! function of an x-normal edge is `((x − x_w)/h_x, 0)` on the cell to its
//! west and `((x_e − x)/h_x, 0)` on the cell to its east. All integrals are
//! evaluated in closed form because every coefficient is cellwise constant.

use crate::error::{Error, Result};
use crate::fields::PermeabilityField;
use crate::grid::{FineGrid, Subdomain};
use crate::linalg::SparseMatrix;

/// Which bilinear form an operator represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorRole {
    /// `a(v, w) = ∫ κ⁻¹ v·w`.
    VelocityMass,
    /// `b(v, p) = ∫ p ∇·v`, stored as (cells × edges).
    Divergence,
    /// `∫ ρ p q`.
    PressureMass,
    /// `∫ κ̃ p q`.
    WeightedPressureMass,
}

/// A matrix in subdomain-local numbering together with the global DOFs its
/// rows and columns stand for.
#[derive(Clone, Debug)]
pub struct AssembledOperator {
    pub role: OperatorRole,
    pub matrix: SparseMatrix,
    pub row_dofs: Vec<usize>,
    pub col_dofs: Vec<usize>,
}

impl AssembledOperator {
    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn into_matrix(self) -> SparseMatrix {
        self.matrix
    }
}

const SELF: f64 = 1.0 / 3.0;
const CROSS: f64 = 1.0 / 6.0;

/// `A` on `V_{h,0}(sub)`.
pub fn assemble_velocity_mass(fine: &FineGrid, field: &PermeabilityField, sub: &Subdomain) -> Result<AssembledOperator> {
    field.matches(fine)?;
    let n = sub.n_velocity();
    let area = fine.cell_area();
    let mut t = Vec::with_capacity(8 * sub.n_cells());
    for &c in sub.cells() {
        let w = area / field.get(c);
        let faces = fine.cell_faces(c);
        for (lo, hi) in [(faces.west, faces.east), (faces.south, faces.north)] {
            let lo = lo.and_then(|e| sub.local_edge(e));
            let hi = hi.and_then(|e| sub.local_edge(e));
            if let Some(i) = lo {
                t.push((i, i, w * SELF));
            }
            if let Some(j) = hi {
                t.push((j, j, w * SELF));
            }
            if let (Some(i), Some(j)) = (lo, hi) {
                t.push((i, j, w * CROSS));
                t.push((j, i, w * CROSS));
            }
        }
    }
    Ok(AssembledOperator {
        role: OperatorRole::VelocityMass,
        matrix: SparseMatrix::from_triplets(n, n, t),
        row_dofs: sub.velocity_dofs().to_vec(),
        col_dofs: sub.velocity_dofs().to_vec(),
    })
}

/// `B` with `b(v, p) = pᵀ B v`, rows are cells of `sub`, columns its edges.
pub fn assemble_divergence(fine: &FineGrid, sub: &Subdomain) -> AssembledOperator {
    let mut t = Vec::with_capacity(2 * sub.n_velocity());
    for (j, &e) in sub.velocity_dofs().iter().enumerate() {
        let len = fine.edge_length(e);
        let (minus, plus) = fine.edge_cells(e);
        // sub.velocity_dofs only holds edges with both cells inside
        t.push((sub.local_cell(minus).expect("edge cell in subdomain"), j, len));
        t.push((sub.local_cell(plus).expect("edge cell in subdomain"), j, -len));
    }
    AssembledOperator {
        role: OperatorRole::Divergence,
        matrix: SparseMatrix::from_triplets(sub.n_cells(), sub.n_velocity(), t),
        row_dofs: sub.cells().to_vec(),
        col_dofs: sub.velocity_dofs().to_vec(),
    }
}

/// Diagonal `∫ w p q` with a globally indexed cellwise weight.
pub fn assemble_pressure_mass(fine: &FineGrid, weight: &[f64], sub: &Subdomain) -> Result<AssembledOperator> {
    weighted_mass(fine, weight, sub, OperatorRole::PressureMass)
}

/// The `s` form: diagonal `∫ κ̃ p q`.
pub fn assemble_spectral_mass(fine: &FineGrid, kappa_tilde: &[f64], sub: &Subdomain) -> Result<AssembledOperator> {
    weighted_mass(fine, kappa_tilde, sub, OperatorRole::WeightedPressureMass)
}

fn weighted_mass(fine: &FineGrid, weight: &[f64], sub: &Subdomain, role: OperatorRole) -> Result<AssembledOperator> {
    Error::check_len("pressure mass weight", fine.n_cells(), weight.len())?;
    let area = fine.cell_area();
    let mut diag = Vec::with_capacity(sub.n_cells());
    for &c in sub.cells() {
        let w = weight[c];
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidArgument(format!("mass weight must be positive, cell {c} has {w}")));
        }
        diag.push(w * area);
    }
    Ok(AssembledOperator {
        role,
        matrix: SparseMatrix::from_diagonal(&diag),
        row_dofs: sub.cells().to_vec(),
        col_dofs: sub.cells().to_vec(),
    })
}

/// Global `A`, `B` and `M_ρ` for the fine problem.
#[derive(Clone, Debug)]
pub struct FineOperators {
    pub a: SparseMatrix,
    pub b: SparseMatrix,
    pub m_rho: Vec<f64>,
    pub cell_area: f64,
    /// `Bᵀ` in CSR form, for column access to `B`.
    bt: SparseMatrix,
}

impl FineOperators {
    pub fn n_velocity(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_pressure(&self) -> usize {
        self.b.nrows()
    }

    /// The `(cell, value)` entries of column `e` of `B`.
    pub fn bt_col(&self, e: usize) -> Vec<(usize, f64)> {
        self.bt.row(e).collect()
    }

    /// `‖p‖_ρ²`.
    pub fn rho_norm_sq(&self, p: &[f64]) -> f64 {
        self.m_rho.iter().zip(p).map(|(m, x)| m * x * x).sum()
    }

    /// `‖v‖_a²`.
    pub fn a_norm_sq(&self, v: &[f64]) -> f64 {
        self.a.quad_form(v)
    }

    /// Unweighted `‖p‖_{L²}²`.
    pub fn l2_norm_sq(&self, p: &[f64]) -> f64 {
        self.cell_area * p.iter().map(|x| x * x).sum::<f64>()
    }
}

pub fn assemble_global(fine: &FineGrid, field: &PermeabilityField, rho: &[f64]) -> Result<FineOperators> {
    let all = Subdomain::whole_grid(fine);
    let a = assemble_velocity_mass(fine, field, &all)?.into_matrix();
    let b = assemble_divergence(fine, &all).into_matrix();
    let bt = b.transpose();
    let m_rho = assemble_pressure_mass(fine, rho, &all)?.matrix.diagonal();
    Ok(FineOperators {
        a,
        b,
        m_rho,
        cell_area: fine.cell_area(),
        bt,
    })
}
