//! The `s`-projection `π` and the oversampled constraint energy minimization
//! problems that define the multiscale velocity basis.
//!
//! For a basis function attached to `(i, j)` on `K_i^+` the unknowns are the
//! velocity `ψ`, the pressure `q` and `μ = Wᵀ q`, where the columns of `W`
//! are `S p_k^m` for the selected functions of every element in `K_i^+`.
//! That keeps `ΠᵀSΠ = W Wᵀ` out of the matrix:
//!
//! ```text
//! [ A  −Bᵀ   0 ] [ψ]   [0]
//! [ B   0    W ] [q] = [g]      g = S_i p_j^i
//! [ 0   Wᵀ  −I ] [μ]   [0]
//! ```
//!
//! Every element whose oversampled window is identical shares one LU.

use std::collections::BTreeMap;
use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::PermeabilityField;
use crate::grid::{CoarsePartition, ElementWindow, Subdomain};
use crate::linalg::{norm2, SparseLu, SparseMatrix};
use crate::rt0::{assemble_divergence, assemble_velocity_mass};
use crate::spectral::SpectralBasis;

/// Relative residual accepted for both equations of the local problem.
pub const CEM_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
struct PiBlock {
    element: usize,
    /// Positions of the element's cells within the subdomain.
    positions: Vec<usize>,
    s_diag: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

/// `π` restricted to the coarse elements of a subdomain, acting on vectors in
/// the subdomain's local cell numbering.
#[derive(Clone, Debug)]
pub struct PiOperator {
    n: usize,
    blocks: Vec<PiBlock>,
}

pub fn build_pi(basis: &SpectralBasis, sub: &Subdomain) -> Result<PiOperator> {
    if sub.elements().is_empty() {
        return Err(Error::InvalidArgument("π needs a subdomain made of coarse elements".into()));
    }
    let mut blocks = Vec::with_capacity(sub.elements().len());
    for &k in sub.elements() {
        if k >= basis.n_elements() {
            return Err(Error::InvalidArgument(format!("no spectral basis for element {k}")));
        }
        let spec = basis.element(k);
        let positions = spec
            .cells
            .iter()
            .map(|&c| sub.local_cell(c))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::InvalidArgument(format!("element {k} is not inside the subdomain")))?;
        blocks.push(PiBlock {
            element: k,
            positions,
            s_diag: spec.s_diag.clone(),
            vectors: basis.selected(k).to_vec(),
        });
    }
    Ok(PiOperator { n: sub.n_cells(), blocks })
}

impl PiOperator {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of selected functions covered.
    pub fn rank(&self) -> usize {
        self.blocks.iter().map(|b| b.vectors.len()).sum()
    }

    pub fn apply(&self, q: &[f64]) -> Vec<f64> {
        assert_eq!(q.len(), self.n);
        let mut out = vec![0.0; self.n];
        for b in &self.blocks {
            for p in &b.vectors {
                let c: f64 = b.positions.iter().zip(&b.s_diag).zip(p).map(|((&i, s), v)| s * v * q[i]).sum();
                for (&i, v) in b.positions.iter().zip(p) {
                    out[i] += c * v;
                }
            }
        }
        out
    }

    /// `s(q, r)` over the subdomain.
    pub fn s_inner(&self, q: &[f64], r: &[f64]) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.positions.iter().zip(&b.s_diag))
            .map(|(&i, s)| s * q[i] * r[i])
            .sum()
    }

    /// `ΠᵀSΠ q = Σ w (wᵀ q)`.
    pub fn apply_constraint(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for b in &self.blocks {
            for p in &b.vectors {
                let c: f64 = b.positions.iter().zip(&b.s_diag).zip(p).map(|((&i, s), v)| s * v * q[i]).sum();
                for ((&i, s), v) in b.positions.iter().zip(&b.s_diag).zip(p) {
                    out[i] += c * s * v;
                }
            }
        }
        out
    }

    /// Columns `(positions, S p)` of `W`, element by element.
    fn w_columns(&self) -> impl Iterator<Item = (&[usize], Vec<f64>)> + '_ {
        self.blocks.iter().flat_map(|b| {
            b.vectors
                .iter()
                .map(move |p| (&b.positions[..], b.s_diag.iter().zip(p).map(|(s, v)| s * v).collect()))
        })
    }

    fn block_of(&self, element: usize) -> Option<&PiBlock> {
        self.blocks.iter().find(|b| b.element == element)
    }
}

/// One localized velocity basis function.
#[derive(Clone, Debug)]
pub struct CemFunction {
    pub element: usize,
    pub index: usize,
    pub support: Arc<Subdomain>,
    /// Values on `support.velocity_dofs()`.
    pub velocity: Vec<f64>,
    /// Companion pressure on `support.cells()`.
    pub pressure: Vec<f64>,
}

impl CemFunction {
    /// The function as a vector over all velocity DOFs of the fine grid.
    pub fn to_global(&self, n_edges: usize) -> Vec<f64> {
        let mut v = vec![0.0; n_edges];
        for (&e, &x) in self.support.velocity_dofs().iter().zip(&self.velocity) {
            v[e] = x;
        }
        v
    }

    pub fn window(&self) -> ElementWindow {
        self.support.window().expect("CEM supports are element windows")
    }
}

#[derive(Clone, Debug)]
pub struct CemBasis {
    pub layers: usize,
    pub lz: usize,
    /// Ordered by `(element, index)`, matching [`SpectralBasis::index`].
    pub functions: Vec<CemFunction>,
}

impl CemBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// Factorized local system on one oversampled window.
struct LocalSystem {
    sub: Arc<Subdomain>,
    pi: PiOperator,
    a: SparseMatrix,
    b: SparseMatrix,
    k: SparseMatrix,
    lu: SparseLu,
}

impl LocalSystem {
    fn new(part: &CoarsePartition, field: &PermeabilityField, basis: &SpectralBasis, window: ElementWindow) -> Result<Self> {
        let fine = part.fine();
        let sub = Subdomain::from_window(part, window);
        let pi = build_pi(basis, &sub)?;
        let a = assemble_velocity_mass(fine, field, &sub)?.into_matrix();
        let b = assemble_divergence(fine, &sub).into_matrix();
        let (nv, np, nm) = (sub.n_velocity(), sub.n_cells(), pi.rank());
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(a.nnz() + 2 * b.nnz() + 2 * nm * basis.lz() + nm);
        t.extend(a.triplets());
        for (i, j, v) in b.triplets() {
            t.push((j, nv + i, -v));
            t.push((nv + i, j, v));
        }
        for (m, (pos, w)) in pi.w_columns().enumerate() {
            for (&i, &x) in pos.iter().zip(&w) {
                t.push((nv + i, nv + np + m, x));
                t.push((nv + np + m, nv + i, x));
            }
            t.push((nv + np + m, nv + np + m, -1.0));
        }
        let n = nv + np + nm;
        let k = SparseMatrix::from_triplets(n, n, t);
        let lu = SparseLu::factor(&k, "cem")?;
        Ok(Self {
            sub: Arc::new(sub),
            pi,
            a,
            b,
            k,
            lu,
        })
    }

    /// Solves for every `(element, j)` in `targets`.
    fn solve(&self, targets: &[(usize, usize)]) -> Result<Vec<CemFunction>> {
        let (nv, np) = (self.sub.n_velocity(), self.sub.n_cells());
        let n = self.k.nrows();
        let mut rhs = Mat::<f64>::zeros(n, targets.len());
        for (col, &(element, j)) in targets.iter().enumerate() {
            let block = self.pi.block_of(element).ok_or_else(|| Error::Internal {
                module: "cem",
                detail: format!("element {element} missing from its own window"),
            })?;
            for ((&i, s), v) in block.positions.iter().zip(&block.s_diag).zip(&block.vectors[j]) {
                rhs[(nv + i, col)] = s * v;
            }
        }
        let mut x = rhs.clone();
        self.lu.solve_mat(&mut x);
        let mut out = Vec::with_capacity(targets.len());
        for (col, &(element, j)) in targets.iter().enumerate() {
            let g: Vec<f64> = (0..np).map(|i| rhs[(nv + i, col)]).collect();
            let mut sol: Vec<f64> = (0..n).map(|i| x[(i, col)]).collect();
            let mut attempt = 0;
            loop {
                let (r1, r2, scale1, scale2) = self.residuals(&sol, &g);
                if r1 <= CEM_TOLERANCE * scale1 && r2 <= CEM_TOLERANCE * scale2 {
                    break;
                }
                if attempt == 3 {
                    let (res, tol) = if r1 > CEM_TOLERANCE * scale1 {
                        (r1 / scale1, CEM_TOLERANCE)
                    } else {
                        (r2 / scale2, CEM_TOLERANCE)
                    };
                    return Err(Error::Tolerance {
                        module: "cem",
                        residual: res,
                        tolerance: tol,
                        detail: format!("basis function ({element}, {j})"),
                    });
                }
                // iterative refinement on the full augmented system
                let kx = self.k.mul_vec(&sol);
                let mut r = Mat::from_fn(n, 1, |i, _| rhs[(i, col)] - kx[i]);
                self.lu.solve_mat(&mut r);
                for (i, s) in sol.iter_mut().enumerate() {
                    *s += r[(i, 0)];
                }
                attempt += 1;
            }
            out.push(CemFunction {
                element,
                index: j,
                support: Arc::clone(&self.sub),
                velocity: sol[..nv].to_vec(),
                pressure: sol[nv..nv + np].to_vec(),
            });
        }
        Ok(out)
    }

    /// Residual norms of `Aψ − Bᵀq = 0` and `Bψ + ΠᵀSΠ q = g` with their
    /// reference scales.
    fn residuals(&self, sol: &[f64], g: &[f64]) -> (f64, f64, f64, f64) {
        let nv = self.sub.n_velocity();
        let np = self.sub.n_cells();
        let psi = &sol[..nv];
        let q = &sol[nv..nv + np];
        let apsi = self.a.mul_vec(psi);
        let btq = self.b.tr_mul_vec(q);
        let r1: Vec<f64> = apsi.iter().zip(&btq).map(|(x, y)| x - y).collect();
        let bpsi = self.b.mul_vec(psi);
        let cq = self.pi.apply_constraint(q);
        let r2: Vec<f64> = (0..np).map(|i| bpsi[i] + cq[i] - g[i]).collect();
        let scale1 = (norm2(&apsi) + norm2(&btq)).max(f64::MIN_POSITIVE);
        let scale2 = norm2(g).max(norm2(&bpsi) + norm2(&cq));
        (norm2(&r1), norm2(&r2), scale1, scale2)
    }
}

/// `(ψ_{j,ms}^i, q_{j,ms}^i)` on `K_i^+` with `l` layers.
pub fn solve_cem_basis(
    part: &CoarsePartition,
    field: &PermeabilityField,
    basis: &SpectralBasis,
    element: usize,
    j: usize,
    layers: usize,
) -> Result<CemFunction> {
    if element >= part.n_elements() || j >= basis.lz() {
        return Err(Error::InvalidArgument(format!(
            "basis function ({element}, {j}) out of range ({} elements, L_z = {})",
            part.n_elements(),
            basis.lz()
        )));
    }
    let window = part.oversample(element, layers).window().expect("window subdomain");
    let sys = LocalSystem::new(part, field, basis, window)?;
    Ok(sys.solve(&[(element, j)])?.remove(0))
}

/// Right-hand sides solved per LU before the next batch.
const RHS_CHUNK: usize = 32;

/// All `N_e · L_z` localized basis functions.
pub fn build_velocity_space(
    part: &CoarsePartition,
    field: &PermeabilityField,
    basis: &SpectralBasis,
    layers: usize,
) -> Result<CemBasis> {
    field.matches(part.fine())?;
    if basis.n_elements() != part.n_elements() {
        return Err(Error::DimensionMismatch {
            context: "spectral basis elements",
            expected: part.n_elements(),
            actual: basis.n_elements(),
        });
    }
    let lz = basis.lz();
    let mut groups: BTreeMap<ElementWindow, Vec<(usize, usize)>> = BTreeMap::new();
    for k in 0..part.n_elements() {
        let w = part.oversample(k, layers).window().expect("window subdomain");
        groups.entry(w).or_default().extend((0..lz).map(|j| (k, j)));
    }
    let groups: Vec<(ElementWindow, Vec<(usize, usize)>)> = groups.into_iter().collect();
    let solved: Vec<Vec<CemFunction>> = groups
        .par_iter()
        .map(|(window, targets)| {
            let sys = LocalSystem::new(part, field, basis, *window)?;
            let chunks: Vec<Vec<CemFunction>> = targets
                .par_chunks(RHS_CHUNK)
                .map(|chunk| sys.solve(chunk))
                .collect::<Result<_>>()?;
            Ok(chunks.into_iter().flatten().collect())
        })
        .collect::<Result<_>>()?;
    let mut functions: Vec<CemFunction> = solved.into_iter().flatten().collect();
    functions.sort_by_key(|f| (f.element, f.index));
    Ok(CemBasis { layers, lz, functions })
}
