//! Multiscale partition of unity `{χ_i}` and the weight `κ̃ = κ Σ_i |∇χ_i|²`.
//!
//! One `χ_i` per coarse node, boundary nodes included, so that `Σ χ_i = 1`
//! everywhere. On each coarse element the four corner functions solve
//! `−∇·(κ∇χ) = 0` with a Q1 discretization on the fine cells and the
//! bilinear hat of the corner as Dirichlet data.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::PermeabilityField;
use crate::grid::{CoarsePartition, FineGrid};
use crate::linalg::{SparseCholesky, SparseMatrix};

/// Corner order within an element: `(0,0), (1,0), (0,1), (1,1)`.
const CORNERS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

#[derive(Clone, Debug)]
pub struct PartitionOfUnity {
    part: CoarsePartition,
    /// Per element, per corner: nodal values on the `(mx+1)×(my+1)` local
    /// fine nodes, row-major.
    local: Vec<[Vec<f64>; 4]>,
    /// Per fine cell, `Σ_i |∇χ_i|²` at the cell center.
    grad_sq_sum: Vec<f64>,
}

impl PartitionOfUnity {
    pub fn partition(&self) -> &CoarsePartition {
        &self.part
    }

    pub fn gradient_sq_sum(&self) -> &[f64] {
        &self.grad_sq_sum
    }

    /// `χ_n` at every fine node of the grid (zero outside `ω_n`).
    pub fn nodal_values(&self, n: usize) -> Result<Vec<f64>> {
        let part = &self.part;
        if n >= part.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "coarse node {n} out of range ({} nodes)",
                part.n_nodes()
            )));
        }
        let fine = part.fine();
        let (mx, my) = part.cells_per_element();
        let (a, b) = part.node_ij(n);
        let mut out = vec![0.0; fine.n_nodes()];
        for k in part.node_elements(n) {
            let (kx, ky) = part.element_ij(k);
            let corner = CORNERS.iter().position(|&(ca, cb)| kx + ca == a && ky + cb == b).unwrap();
            let vals = &self.local[k][corner];
            for jy in 0..=my {
                for jx in 0..=mx {
                    out[fine.node(kx * mx + jx, ky * my + jy)] = vals[jy * (mx + 1) + jx];
                }
            }
        }
        Ok(out)
    }

    /// `|∇χ_n|²` per fine cell.
    pub fn gradient_sq(&self, n: usize) -> Result<Vec<f64>> {
        let chi = self.nodal_values(n)?;
        let fine = self.part.fine();
        Ok((0..fine.n_cells()).map(|c| cell_gradient_sq(fine, &chi, c)).collect())
    }
}

fn cell_gradient_sq(fine: &FineGrid, nodal: &[f64], c: usize) -> f64 {
    let (ix, iy) = fine.cell_ij(c);
    let v00 = nodal[fine.node(ix, iy)];
    let v10 = nodal[fine.node(ix + 1, iy)];
    let v01 = nodal[fine.node(ix, iy + 1)];
    let v11 = nodal[fine.node(ix + 1, iy + 1)];
    let gx = ((v10 - v00) + (v11 - v01)) / (2.0 * fine.hx());
    let gy = ((v01 - v00) + (v11 - v10)) / (2.0 * fine.hy());
    gx * gx + gy * gy
}

/// Q1 element stiffness for a `hx × hy` cell with unit coefficient, local
/// node order as in [`CORNERS`].
fn q1_stiffness(hx: f64, hy: f64) -> [[f64; 4]; 4] {
    let k1 = [[1.0, -1.0], [-1.0, 1.0]];
    let m1 = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
    let mut k = [[0.0; 4]; 4];
    for (p, &(a, b)) in CORNERS.iter().enumerate() {
        for (q, &(a2, b2)) in CORNERS.iter().enumerate() {
            k[p][q] = hy / hx * k1[a][a2] * m1[b][b2] + hx / hy * m1[a][a2] * k1[b][b2];
        }
    }
    k
}

pub fn solve_pou(fine: &FineGrid, part: &CoarsePartition, field: &PermeabilityField) -> Result<PartitionOfUnity> {
    field.matches(fine)?;
    if part.fine() != fine {
        return Err(Error::InvalidArgument("coarse partition was built on a different fine grid".into()));
    }
    let local: Vec<[Vec<f64>; 4]> = (0..part.n_elements())
        .into_par_iter()
        .map(|k| solve_element(part, field, k))
        .collect::<Result<_>>()?;

    let (mx, my) = part.cells_per_element();
    let mut grad_sq_sum = vec![0.0; fine.n_cells()];
    let (hx, hy) = (fine.hx(), fine.hy());
    for (k, chis) in local.iter().enumerate() {
        let (kx, ky) = part.element_ij(k);
        for jy in 0..my {
            for jx in 0..mx {
                let c = fine.cell(kx * mx + jx, ky * my + jy);
                let n0 = jy * (mx + 1) + jx;
                let mut s = 0.0;
                for chi in chis {
                    let (v00, v10, v01, v11) = (chi[n0], chi[n0 + 1], chi[n0 + mx + 1], chi[n0 + mx + 2]);
                    let gx = ((v10 - v00) + (v11 - v01)) / (2.0 * hx);
                    let gy = ((v01 - v00) + (v11 - v10)) / (2.0 * hy);
                    s += gx * gx + gy * gy;
                }
                grad_sq_sum[c] = s;
            }
        }
    }
    Ok(PartitionOfUnity {
        part: part.clone(),
        local,
        grad_sq_sum,
    })
}

fn solve_element(part: &CoarsePartition, field: &PermeabilityField, k: usize) -> Result<[Vec<f64>; 4]> {
    let fine = part.fine();
    let (mx, my) = part.cells_per_element();
    let (kx, ky) = part.element_ij(k);
    let nloc = (mx + 1) * (my + 1);
    let local_node = |jx: usize, jy: usize| jy * (mx + 1) + jx;
    let is_boundary = |jx: usize, jy: usize| jx == 0 || jy == 0 || jx == mx || jy == my;

    // bilinear hats of the four corners, exact on ∂K and used as Dirichlet data
    let mut out: [Vec<f64>; 4] = Default::default();
    for (corner, &(a, b)) in CORNERS.iter().enumerate() {
        let mut v = vec![0.0; nloc];
        for jy in 0..=my {
            for jx in 0..=mx {
                let s = jx as f64 / mx as f64;
                let t = jy as f64 / my as f64;
                let wx = if a == 1 { s } else { 1.0 - s };
                let wy = if b == 1 { t } else { 1.0 - t };
                v[local_node(jx, jy)] = wx * wy;
            }
        }
        out[corner] = v;
    }
    if mx < 2 || my < 2 {
        return Ok(out);
    }

    let mut interior = vec![usize::MAX; nloc];
    let mut n_int = 0;
    for jy in 1..my {
        for jx in 1..mx {
            interior[local_node(jx, jy)] = n_int;
            n_int += 1;
        }
    }
    let ke = q1_stiffness(fine.hx(), fine.hy());
    let mut t = Vec::with_capacity(16 * mx * my);
    // K_IB g_B, one column per corner
    let mut coupling = vec![[0.0; 4]; n_int];
    for jy in 0..my {
        for jx in 0..mx {
            let kappa = field.get(fine.cell(kx * mx + jx, ky * my + jy));
            let nodes = CORNERS.map(|(a, b)| (jx + a, jy + b));
            for (p, &(px, py)) in nodes.iter().enumerate() {
                let i = interior[local_node(px, py)];
                if i == usize::MAX {
                    continue;
                }
                for (q, &(qx, qy)) in nodes.iter().enumerate() {
                    let val = kappa * ke[p][q];
                    if is_boundary(qx, qy) {
                        for (corner, g) in out.iter().enumerate() {
                            coupling[i][corner] += val * g[local_node(qx, qy)];
                        }
                    } else {
                        t.push((i, interior[local_node(qx, qy)], val));
                    }
                }
            }
        }
    }
    let kii = SparseMatrix::from_triplets(n_int, n_int, t);
    let chol = SparseCholesky::factor(&kii, "pou").map_err(|e| Error::Internal {
        module: "pou",
        detail: format!("element {k}: {e}"),
    })?;
    let mut rhs = faer::Mat::from_fn(n_int, 4, |i, corner| -coupling[i][corner]);
    chol.solve_mat(&mut rhs);
    for (corner, v) in out.iter_mut().enumerate() {
        for jy in 1..my {
            for jx in 1..mx {
                let l = local_node(jx, jy);
                v[l] = rhs[(interior[l], corner)];
            }
        }
    }
    Ok(out)
}

/// Cellwise `κ̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaTilde {
    values: Vec<f64>,
}

impl KappaTilde {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, c: usize) -> f64 {
        self.values[c]
    }
}

pub fn compute_kappa_tilde(field: &PermeabilityField, pou: &PartitionOfUnity) -> Result<KappaTilde> {
    let g = pou.gradient_sq_sum();
    Error::check_len("kappa tilde", field.values().len(), g.len())?;
    let values: Vec<f64> = field.values().iter().zip(g).map(|(k, s)| k * s).collect();
    if let Some((c, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Internal {
            module: "pou",
            detail: format!("kappa tilde is not positive on cell {c}: {v}"),
        });
    }
    Ok(KappaTilde { values })
}
