//! Local spectral problems and the auxiliary pressure space `Q_ms`.
//!
//! On each coarse element the velocity is eliminated, leaving the dense
//! pressure problem `G p = λ S p` with `G = B A⁻¹ Bᵀ` and `S = diag(κ̃ |c|)`.
//! Constants lie in the kernel of `Bᵀ` exactly, so the pair `(0, const)` is
//! split off analytically and the symmetric problem is solved on its
//! `s`-orthogonal complement.

use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::PermeabilityField;
use crate::grid::CoarsePartition;
use crate::linalg::{symmetric_eigen, SparseCholesky};
use crate::pou::KappaTilde;
use crate::rt0::{assemble_divergence, assemble_velocity_mass};

/// All eigenpairs of one coarse element, eigenvalues ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementSpectrum {
    pub element: usize,
    /// Global fine cells of the element, ascending; the local index of every
    /// vector below.
    pub cells: Vec<usize>,
    /// Diagonal of `S` on `cells` (`κ̃_c · |c|`).
    pub s_diag: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// `s`-orthonormal eigenvectors, one per eigenvalue.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl ElementSpectrum {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn s_dot(&self, p: &[f64], q: &[f64]) -> f64 {
        self.s_diag.iter().zip(p).zip(q).map(|((s, a), b)| s * a * b).sum()
    }
}

pub fn solve_local_spectral(
    part: &CoarsePartition,
    field: &PermeabilityField,
    kappa_tilde: &KappaTilde,
    element: usize,
) -> Result<ElementSpectrum> {
    if element >= part.n_elements() {
        return Err(Error::InvalidArgument(format!(
            "element {element} out of range ({} elements)",
            part.n_elements()
        )));
    }
    let fine = part.fine();
    Error::check_len("kappa tilde", fine.n_cells(), kappa_tilde.values().len())?;
    let sub = part.oversample(element, 0);
    let n = sub.n_cells();
    let area = fine.cell_area();
    let s_diag: Vec<f64> = sub.cells().iter().map(|&c| kappa_tilde.get(c) * area).collect();

    let g = if sub.n_velocity() == 0 {
        Mat::<f64>::zeros(n, n)
    } else {
        let a = assemble_velocity_mass(fine, field, &sub)?.into_matrix();
        let b = assemble_divergence(fine, &sub).into_matrix();
        let chol = SparseCholesky::factor(&a, "spectral")?;
        // X = A⁻¹ Bᵀ, then G = B X
        let mut x = Mat::<f64>::zeros(b.ncols(), n);
        for (i, j, v) in b.triplets() {
            x[(j, i)] = v;
        }
        chol.solve_mat(&mut x);
        let mut g = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            for (e, v) in b.row(i) {
                for k in 0..n {
                    g[(i, k)] += v * x[(e, k)];
                }
            }
        }
        for i in 0..n {
            for k in 0..i {
                let m = 0.5 * (g[(i, k)] + g[(k, i)]);
                g[(i, k)] = m;
                g[(k, i)] = m;
            }
        }
        g
    };

    // H = S^{-1/2} G S^{-1/2}
    let isq: Vec<f64> = s_diag.iter().map(|s| 1.0 / s.sqrt()).collect();
    let mut h = Mat::from_fn(n, n, |i, k| isq[i] * g[(i, k)] * isq[k]);

    // Householder reflector mapping e = S^{1/2}·1/‖·‖ onto the first axis.
    let mut w: Vec<f64> = s_diag.iter().map(|s| s.sqrt()).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);
    w[0] += 1.0;
    let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= wn);
    reflect_rows(&mut h, &w);
    reflect_cols(&mut h, &w);

    let mut eigenvalues = vec![0.0];
    let mut ys: Vec<Vec<f64>> = Vec::with_capacity(n);
    // the reflector maps the first axis to −e; the sign is fixed below
    let mut first = vec![0.0; n];
    first[0] = 1.0;
    ys.push(first);
    if n > 1 {
        let inner = Mat::from_fn(n - 1, n - 1, |i, k| h[(i + 1, k + 1)]);
        let (vals, vecs) = symmetric_eigen(inner.as_ref(), "spectral")?;
        for (j, &l) in vals.iter().enumerate() {
            eigenvalues.push(l);
            let mut y = vec![0.0; n];
            for i in 0..n - 1 {
                y[i + 1] = vecs[(i, j)];
            }
            ys.push(y);
        }
    }
    let mut eigenvectors: Vec<Vec<f64>> = ys
        .into_iter()
        .map(|mut y| {
            let d: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
            y.iter_mut().zip(&w).for_each(|(v, wi)| *v -= 2.0 * d * wi);
            y.iter().zip(&isq).map(|(v, s)| v * s).collect()
        })
        .collect();

    let spectrum_s = |p: &[f64], q: &[f64]| -> f64 { s_diag.iter().zip(p).zip(q).map(|((s, a), b)| s * a * b).sum() };
    for j in 0..eigenvectors.len() {
        fix_sign(&mut eigenvectors[j]);
        for i in 0..j {
            let (done, rest) = eigenvectors.split_at_mut(j);
            let d = spectrum_s(&done[i], &rest[0]);
            rest[0].iter_mut().zip(&done[i]).for_each(|(v, u)| *v -= d * u);
        }
        let nrm = spectrum_s(&eigenvectors[j], &eigenvectors[j]).sqrt();
        eigenvectors[j].iter_mut().for_each(|v| *v /= nrm);
        fix_sign(&mut eigenvectors[j]);
    }
    // deflated eigenvalues can come out a hair below zero
    for l in eigenvalues.iter_mut().skip(1) {
        if *l < 0.0 && *l > -1e-12 * (1.0 + h.norm_max()) {
            *l = 0.0;
        }
    }

    Ok(ElementSpectrum {
        element,
        cells: sub.cells().to_vec(),
        s_diag,
        eigenvalues,
        eigenvectors,
    })
}

fn reflect_rows(m: &mut Mat<f64>, w: &[f64]) {
    let n = w.len();
    for k in 0..m.ncols() {
        let d: f64 = (0..n).map(|i| w[i] * m[(i, k)]).sum();
        for i in 0..n {
            m[(i, k)] -= 2.0 * d * w[i];
        }
    }
}

fn reflect_cols(m: &mut Mat<f64>, w: &[f64]) {
    let n = w.len();
    for i in 0..m.nrows() {
        let d: f64 = (0..n).map(|k| w[k] * m[(i, k)]).sum();
        for k in 0..n {
            m[(i, k)] -= 2.0 * d * w[k];
        }
    }
}

/// Makes the first entry of largest magnitude positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Spectra of every coarse element, in element order.
pub fn solve_all_spectral(
    part: &CoarsePartition,
    field: &PermeabilityField,
    kappa_tilde: &KappaTilde,
) -> Result<Vec<ElementSpectrum>> {
    (0..part.n_elements())
        .into_par_iter()
        .map(|k| solve_local_spectral(part, field, kappa_tilde, k))
        .collect()
}

/// The first `L_z` eigenpairs of every element.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    lz: usize,
    spectra: Vec<ElementSpectrum>,
    lambda: Option<f64>,
}

impl SpectralBasis {
    pub fn lz(&self) -> usize {
        self.lz
    }

    pub fn n_elements(&self) -> usize {
        self.spectra.len()
    }

    /// Total number of selected functions `M = Σ_i J_i`.
    pub fn dim(&self) -> usize {
        self.lz * self.spectra.len()
    }

    pub fn element(&self, k: usize) -> &ElementSpectrum {
        &self.spectra[k]
    }

    pub fn spectra(&self) -> &[ElementSpectrum] {
        &self.spectra
    }

    /// Selected vectors of element `k`.
    pub fn selected(&self, k: usize) -> &[Vec<f64>] {
        &self.spectra[k].eigenvectors[..self.lz]
    }

    /// Global index of the `j`-th function on element `k`.
    pub fn index(&self, k: usize, j: usize) -> usize {
        k * self.lz + j
    }

    /// `Λ = min_i λ_{J_i+1}^i`; `None` when the whole local space is kept.
    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }
}

pub fn select_basis(spectra: Vec<ElementSpectrum>, lz: usize) -> Result<SpectralBasis> {
    let min_len = spectra.iter().map(|s| s.len()).min().unwrap_or(0);
    if lz == 0 || lz > min_len {
        return Err(Error::Config(format!(
            "L_z = {lz} is out of range 1..={min_len} (fine cells per coarse element)"
        )));
    }
    let lambda = spectra
        .iter()
        .filter_map(|s| s.eigenvalues.get(lz).copied())
        .reduce(f64::min);
    Ok(SpectralBasis { lz, spectra, lambda })
}

const CACHE_MAGIC: &[u8; 8] = b"CEMSPEC1";

/// Writes spectra to `path`, tagged with `key` (e.g. a field fingerprint and
/// partition sizes).
pub fn save_spectra(path: impl AsRef<Path>, key: &str, spectra: &[ElementSpectrum]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    put_u64(&mut buf, key.len() as u64);
    buf.extend_from_slice(key.as_bytes());
    put_u64(&mut buf, spectra.len() as u64);
    for s in spectra {
        put_u64(&mut buf, s.element as u64);
        put_u64(&mut buf, s.cells.len() as u64);
        for &c in &s.cells {
            put_u64(&mut buf, c as u64);
        }
        for v in s.s_diag.iter().chain(&s.eigenvalues).chain(s.eigenvectors.iter().flatten()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads spectra saved under the same `key`; `Ok(None)` when the file is
/// missing or was written for another key.
pub fn load_spectra(path: impl AsRef<Path>, key: &str) -> Result<Option<Vec<ElementSpectrum>>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    match std::fs::File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let corrupt = || Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "truncated or corrupt spectral cache".into(),
    };
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8).ok_or_else(corrupt)? != CACHE_MAGIC {
        return Err(corrupt());
    }
    let klen = r.u64().ok_or_else(corrupt)? as usize;
    if r.take(klen).ok_or_else(corrupt)? != key.as_bytes() {
        return Ok(None);
    }
    let count = r.u64().ok_or_else(corrupt)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let element = r.u64().ok_or_else(corrupt)? as usize;
        let n = r.u64().ok_or_else(corrupt)? as usize;
        let cells = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Option<Vec<_>>>().ok_or_else(corrupt)?;
        let s_diag = r.f64s(n).ok_or_else(corrupt)?;
        let eigenvalues = r.f64s(n).ok_or_else(corrupt)?;
        let eigenvectors = (0..n).map(|_| r.f64s(n)).collect::<Option<Vec<_>>>().ok_or_else(corrupt)?;
        out.push(ElementSpectrum {
            element,
            cells,
            s_diag,
            eigenvalues,
            eigenvectors,
        });
    }
    Ok(Some(out))
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        (0..n).map(|_| Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))).collect()
    }
}
