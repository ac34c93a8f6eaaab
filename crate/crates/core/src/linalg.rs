//! Sparse storage and the direct solvers the pipeline relies on.
//!
//! Factorizations are delegated to `faer`. Its internal parallelism is pinned
//! to sequential so that results are bit-identical regardless of how many
//! threads the outer (rayon) loops use.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

static SEQUENTIAL_KERNELS: Once = Once::new();

fn pin_kernels() {
    SEQUENTIAL_KERNELS.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < nrows && j < ncols, "triplet ({i}, {j}) outside {nrows}x{ncols}");
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `selfᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    y[j] += v * xi;
                }
            }
        }
        y
    }

    /// `xᵀ self x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        (0..self.nrows)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        SparseMatrix::from_triplets(
            self.ncols,
            self.nrows,
            self.triplets().map(|(i, j, v)| (j, i, v)).collect(),
        )
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Largest `|a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub(crate) fn to_faer(&self) -> SparseColMat<usize, f64> {
        let t: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .map(|(i, j, v)| Triplet::new(i, j, v))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &t)
            .expect("triplets are in range and sorted")
    }
}

/// Sparse `LLᵀ` factorization of a symmetric positive definite matrix.
pub struct SparseCholesky {
    n: usize,
    inner: faer::sparse::linalg::solvers::Llt<usize, f64>,
}

impl SparseCholesky {
    pub fn factor(a: &SparseMatrix, module: &'static str) -> Result<Self> {
        pin_kernels();
        if a.nrows() != a.ncols() {
            return Err(Error::check_len("cholesky (square)", a.nrows(), a.ncols()).unwrap_err());
        }
        let inner = a.to_faer().sp_cholesky(Side::Lower).map_err(|e| Error::Singular {
            module,
            detail: format!("sparse Cholesky of a {0}x{0} matrix failed: {e:?}", a.nrows()),
        })?;
        Ok(Self { n: a.nrows(), inner })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = Mat::from_fn(self.n, 1, |i, _| b[i]);
        self.inner.solve_in_place(&mut x);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_mat(&self, b: &mut Mat<f64>) {
        self.inner.solve_in_place(b);
    }
}

/// Sparse LU with partial pivoting, for the indefinite saddle systems.
pub struct SparseLu {
    n: usize,
    inner: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(a: &SparseMatrix, module: &'static str) -> Result<Self> {
        pin_kernels();
        if a.nrows() != a.ncols() {
            return Err(Error::check_len("lu (square)", a.nrows(), a.ncols()).unwrap_err());
        }
        let inner = a.to_faer().sp_lu().map_err(|e| Error::Singular {
            module,
            detail: format!("sparse LU of a {0}x{0} matrix failed: {e:?}", a.nrows()),
        })?;
        Ok(Self { n: a.nrows(), inner })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve_mat(&self, b: &mut Mat<f64>) {
        self.inner.solve_in_place(b);
    }
}

/// Dense Cholesky; fails unless the matrix is numerically positive definite.
pub struct DenseCholesky {
    inner: faer::linalg::solvers::Llt<f64>,
}

impl DenseCholesky {
    pub fn factor(a: MatRef<'_, f64>, module: &'static str) -> Result<Self> {
        pin_kernels();
        let inner = a.llt(Side::Lower).map_err(|e| Error::Singular {
            module,
            detail: format!("dense Cholesky of a {0}x{0} matrix failed: {e:?}", a.nrows()),
        })?;
        Ok(Self { inner })
    }

    pub fn solve_in_place(&self, b: &mut Mat<f64>) {
        self.inner.solve_in_place(b);
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.inner.solve_in_place(&mut x);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// The lower factor `L` with `A = L Lᵀ`.
    pub fn factor_l(&self) -> MatRef<'_, f64> {
        self.inner.L()
    }
}

/// Symmetric eigendecomposition, eigenvalues ascending, eigenvectors as the
/// columns of the returned matrix.
pub fn symmetric_eigen(a: MatRef<'_, f64>, module: &'static str) -> Result<(Vec<f64>, Mat<f64>)> {
    pin_kernels();
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Internal {
        module,
        detail: format!("symmetric eigensolver did not converge: {e:?}"),
    })?;
    let s = evd.S().column_vector();
    let values: Vec<f64> = (0..a.nrows()).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix,
/// discarding eigenvalues below `rel_tol · λ_max`. Returns the inverse and
/// the number of discarded directions.
pub fn psd_pseudo_inverse(a: MatRef<'_, f64>, rel_tol: f64, module: &'static str) -> Result<(Mat<f64>, usize)> {
    let n = a.nrows();
    let (vals, vecs) = symmetric_eigen(a, module)?;
    let lmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rel_tol * lmax;
    let mut dropped = 0;
    let mut scaled = vecs.clone();
    for (k, &l) in vals.iter().enumerate() {
        let w = if l > cutoff { 1.0 / l } else { 0.0 };
        if l <= cutoff {
            dropped += 1;
        }
        for i in 0..n {
            scaled[(i, k)] *= w;
        }
    }
    Ok((&scaled * vecs.transpose(), dropped))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn mat_from_rows(rows: usize, cols: usize, data: &[f64]) -> Mat<f64> {
    Mat::from_fn(rows, cols, |i, j| data[i * cols + j])
}
