//! Backward Euler on the fine RT0 system and on the reduced multiscale system.
//!
//! Both schemes solve, per step,
//!
//! ```text
//! A v − Bᵀ p = 0
//! M_ρ (p − p_n)/τ + B v = F(t_{n+1})
//! ```
//!
//! The fine problem eliminates `p`, leaving the SPD system
//! `(A + τ Bᵀ M_ρ⁻¹ B) v = Bᵀ(p_n + τ M_ρ⁻¹ F)`. The reduced problem eliminates
//! `v` instead. The localized velocity functions are linearly dependent up
//! to the localization error: any combination whose pressure constraint is a
//! global constant gives `ψ = 0` on the whole domain. `𝒜` is therefore only
//! semidefinite, and it is inverted on its numerical range.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use faer::Mat;

use crate::cem::CemBasis;
use crate::error::{Error, Result};
use crate::fields::SourceSpec;
use crate::grid::ElementWindow;
use crate::linalg::{dot, norm2, psd_pseudo_inverse, DenseCholesky, SparseCholesky, SparseLu, SparseMatrix};
use crate::rt0::FineOperators;
use crate::spectral::SpectralBasis;

/// Relative residual accepted for every linear solve in a time step.
pub const STEP_TOLERANCE: f64 = 1e-10;

/// Eigenvalues of `𝒜` below this fraction of the largest are treated as zero.
pub const PSEUDO_INVERSE_CUTOFF: f64 = 1e-13;

/// Derived quantity of one state `(velocity, pressure)`.
pub type Column = dyn Fn(&[f64], &[f64]) -> f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    Fine,
    /// Coefficients in the multiscale bases.
    Multiscale,
    /// Multiscale solution expanded onto the fine grid.
    Prolongated,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub tau: f64,
    pub times: Vec<f64>,
    pub velocity: Vec<Vec<f64>>,
    pub pressure: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Number of time steps `N` (the trajectory holds `N + 1` states).
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Writes `n,t,<name>...` with one value per column function.
    pub fn write_csv(&self, path: impl AsRef<Path>, columns: &[(&str, &Column)]) -> Result<()> {
        let mut s = String::from("n,t");
        for (name, _) in columns {
            s.push(',');
            s.push_str(name);
        }
        s.push('\n');
        for n in 0..self.times.len() {
            s.push_str(&format!("{n},{}", self.times[n]));
            for (_, f) in columns {
                s.push_str(&format!(",{:e}", f(&self.velocity[n], &self.pressure[n])));
            }
            s.push('\n');
        }
        write_atomic(path.as_ref(), s.as_bytes())
    }

    /// Binary dump of the requested steps: magic `CEMSNAP1`, step count, then
    /// per step `n: u64, t: f64, len_v: u64, v, len_p: u64, p`, little-endian.
    pub fn write_snapshots(&self, path: impl AsRef<Path>, steps: &[usize]) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"CEMSNAP1");
        let steps: Vec<usize> = steps.iter().copied().filter(|&n| n < self.times.len()).collect();
        buf.extend_from_slice(&(steps.len() as u64).to_le_bytes());
        for n in steps {
            buf.extend_from_slice(&(n as u64).to_le_bytes());
            buf.extend_from_slice(&self.times[n].to_le_bytes());
            for field in [&self.velocity[n], &self.pressure[n]] {
                buf.extend_from_slice(&(field.len() as u64).to_le_bytes());
                for x in field {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        write_atomic(path.as_ref(), &buf)
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `N = T/τ`, rejecting a `T` that is not an integer multiple of `τ`.
pub fn step_count(tau: f64, t_final: f64) -> Result<usize> {
    if !(tau > 0.0 && tau.is_finite()) || !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!("need τ > 0 and T > 0, got τ = {tau}, T = {t_final}")));
    }
    let n = (t_final / tau).round();
    if (n * tau - t_final).abs() > 1e-9 * t_final || n < 1.0 {
        return Err(Error::InvalidArgument(format!("T = {t_final} is not a multiple of τ = {tau}")));
    }
    Ok(n as usize)
}

fn load_vector(spec: &SourceSpec, t: f64, area: f64) -> Vec<f64> {
    spec.source_at(t).into_iter().map(|f| f * area).collect()
}

/// `max_n ‖p^{(n)}‖²` may not exceed this when the stability estimate holds:
/// `4(‖h_p‖_ρ² + Σ_n τ ‖ρ⁻¹ f^{(n)}‖_ρ²)`.
pub fn stability_bound(ops: &FineOperators, spec: &SourceSpec, tau: f64, t_final: f64) -> Result<f64> {
    let n = step_count(tau, t_final)?;
    let mut sum = ops.rho_norm_sq(&spec.initial_pressure);
    for k in 1..=n {
        let f = spec.source_at(k as f64 * tau);
        sum += tau * f.iter().zip(&spec.rho).map(|(f, r)| f * f / r * ops.cell_area).sum::<f64>();
    }
    Ok(4.0 * sum)
}

/// Fine-grid reference trajectory, starting from `(h_v, h_p)`.
pub fn solve_fine_reference(ops: &FineOperators, spec: &SourceSpec, tau: f64, t_final: f64) -> Result<Trajectory> {
    let n_steps = step_count(tau, t_final)?;
    let (nv, np) = (ops.n_velocity(), ops.n_pressure());
    Error::check_len("initial pressure", np, spec.initial_pressure.len())?;
    Error::check_len("initial velocity", nv, spec.initial_velocity.len())?;
    Error::check_len("density", np, spec.rho.len())?;
    let m = &ops.m_rho;

    let mut t = Vec::with_capacity(ops.a.nnz() + 8 * np);
    t.extend(ops.a.triplets());
    for c in 0..np {
        let row: Vec<(usize, f64)> = ops.b.row(c).collect();
        for &(e1, b1) in &row {
            for &(e2, b2) in &row {
                t.push((e1, e2, tau * b1 * b2 / m[c]));
            }
        }
    }
    let k = SparseMatrix::from_triplets(nv, nv, t);
    let chol = SparseCholesky::factor(&k, "solver")?;

    let mut traj = Trajectory {
        kind: TrajectoryKind::Fine,
        tau,
        times: vec![0.0],
        velocity: vec![spec.initial_velocity.clone()],
        pressure: vec![spec.initial_pressure.clone()],
    };
    for n in 1..=n_steps {
        let time = n as f64 * tau;
        let f = load_vector(spec, time, ops.cell_area);
        let p_old = traj.pressure.last().unwrap();
        let shifted: Vec<f64> = (0..np).map(|c| p_old[c] + tau * f[c] / m[c]).collect();
        let rhs = ops.b.tr_mul_vec(&shifted);
        let v = refined_solve(|x| k.mul_vec(x), |r| chol.solve(r), &rhs, "solver", n)?;
        let bv = ops.b.mul_vec(&v);
        let p: Vec<f64> = (0..np).map(|c| p_old[c] + tau * (f[c] - bv[c]) / m[c]).collect();
        traj.times.push(time);
        traj.velocity.push(v);
        traj.pressure.push(p);
    }
    Ok(traj)
}

fn refined_solve(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    solve: impl Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    module: &'static str,
    step: usize,
) -> Result<Vec<f64>> {
    let scale = norm2(rhs);
    let mut x = solve(rhs);
    if scale == 0.0 {
        return Ok(x);
    }
    for attempt in 0.. {
        let r: Vec<f64> = apply(&x).iter().zip(rhs).map(|(a, b)| b - a).collect();
        let res = norm2(&r);
        if res <= STEP_TOLERANCE * scale {
            break;
        }
        if attempt == 3 {
            return Err(Error::Tolerance {
                module,
                residual: res / scale,
                tolerance: STEP_TOLERANCE,
                detail: format!("time step {step}"),
            });
        }
        let d = solve(&r);
        x.iter_mut().zip(&d).for_each(|(x, d)| *x += d);
    }
    Ok(x)
}

/// Steady mixed Darcy problem `A v − Bᵀ p = 0`, `B v = F` with `∫ p = 0`;
/// `f` holds cell averages and must integrate to zero.
pub fn solve_steady(ops: &FineOperators, f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (nv, np) = (ops.n_velocity(), ops.n_pressure());
    Error::check_len("steady source", np, f.len())?;
    let n = nv + np + 1;
    let mut t: Vec<(usize, usize, f64)> = ops.a.triplets().collect();
    for (i, j, v) in ops.b.triplets() {
        t.push((j, nv + i, -v));
        t.push((nv + i, j, v));
    }
    for c in 0..np {
        t.push((nv + c, n - 1, ops.cell_area));
        t.push((n - 1, nv + c, ops.cell_area));
    }
    let k = SparseMatrix::from_triplets(n, n, t);
    let lu = SparseLu::factor(&k, "solver")?;
    let mut rhs = vec![0.0; n];
    for c in 0..np {
        rhs[nv + c] = f[c] * ops.cell_area;
    }
    let x = refined_solve(
        |x| k.mul_vec(x),
        |r| {
            let mut m = Mat::from_fn(n, 1, |i, _| r[i]);
            lu.solve_mat(&mut m);
            (0..n).map(|i| m[(i, 0)]).collect()
        },
        &rhs,
        "solver",
        0,
    )?;
    Ok((x[..nv].to_vec(), x[nv..nv + np].to_vec()))
}

/// Coarse matrices and the data needed to expand coarse coefficients.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    /// `𝒜 = Ψᵀ A Ψ`.
    pub a: Mat<f64>,
    /// `ℬ = Ψᵀ Bᵀ P` (velocity functions × pressure functions).
    pub b: Mat<f64>,
    /// `ℳ = Pᵀ M_ρ P`, block diagonal.
    pub m: Mat<f64>,
    a_pinv: Mat<f64>,
    dropped: usize,
    cem: CemBasis,
    spectral: SpectralBasis,
    n_edges: usize,
    n_cells: usize,
    cell_area: f64,
}

impl ReducedSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Directions of `𝒜` discarded as numerically null.
    pub fn null_directions(&self) -> usize {
        self.dropped
    }

    pub fn cem(&self) -> &CemBasis {
        &self.cem
    }

    pub fn spectral(&self) -> &SpectralBasis {
        &self.spectral
    }

    /// `‖p‖_ℳ²` for a coefficient vector.
    pub fn m_norm_sq(&self, p: &[f64]) -> f64 {
        quad(&self.m, p)
    }

    /// `‖v‖_𝒜²` for a coefficient vector.
    pub fn a_norm_sq(&self, v: &[f64]) -> f64 {
        quad(&self.a, v)
    }

    /// `((f, p_m))_m` for cellwise source averages `f`.
    pub fn reduced_load(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for k in 0..self.spectral.n_elements() {
            let spec = self.spectral.element(k);
            for (j, p) in self.spectral.selected(k).iter().enumerate() {
                out[self.spectral.index(k, j)] =
                    spec.cells.iter().zip(p).map(|(&c, v)| f[c] * v).sum::<f64>() * self.cell_area;
            }
        }
        out
    }

    /// Coefficients of `π(h)`.
    pub fn project_pressure(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for k in 0..self.spectral.n_elements() {
            let spec = self.spectral.element(k);
            for (j, p) in self.spectral.selected(k).iter().enumerate() {
                out[self.spectral.index(k, j)] = spec
                    .cells
                    .iter()
                    .zip(&spec.s_diag)
                    .zip(p)
                    .map(|((&c, s), v)| s * h[c] * v)
                    .sum();
            }
        }
        out
    }

    /// Coefficients of the `a`-orthogonal projection of `h` onto `V_ms`.
    pub fn project_velocity(&self, ops: &FineOperators, h: &[f64]) -> Vec<f64> {
        if h.iter().all(|&x| x == 0.0) {
            return vec![0.0; self.dim()];
        }
        let ah = ops.a.mul_vec(h);
        let rhs: Vec<f64> = self
            .cem
            .functions
            .iter()
            .map(|f| f.support.velocity_dofs().iter().zip(&f.velocity).map(|(&e, x)| ah[e] * x).sum())
            .collect();
        mat_vec(&self.a_pinv, &rhs)
    }

    pub fn pressure_to_fine(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_cells];
        for k in 0..self.spectral.n_elements() {
            let spec = self.spectral.element(k);
            for (j, p) in self.spectral.selected(k).iter().enumerate() {
                let c = coef[self.spectral.index(k, j)];
                if c != 0.0 {
                    for (&cell, v) in spec.cells.iter().zip(p) {
                        out[cell] += c * v;
                    }
                }
            }
        }
        out
    }

    pub fn velocity_to_fine(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_edges];
        for (f, &c) in self.cem.functions.iter().zip(coef) {
            if c != 0.0 {
                for (&e, x) in f.support.velocity_dofs().iter().zip(&f.velocity) {
                    out[e] += c * x;
                }
            }
        }
        out
    }
}

fn quad(m: &Mat<f64>, x: &[f64]) -> f64 {
    dot(x, &mat_vec(m, x))
}

fn mat_vec(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.nrows()];
    for j in 0..m.ncols() {
        let xj = x[j];
        if xj != 0.0 {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += m[(i, j)] * xj;
            }
        }
    }
    y
}

/// Functions sharing one support are handled as a dense block.
const BLOCK_COLUMNS: usize = 256;

pub fn assemble_reduced(ops: &FineOperators, cem: CemBasis, spectral: SpectralBasis) -> Result<ReducedSystem> {
    let dim = spectral.dim();
    if cem.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "velocity and pressure basis sizes",
            expected: dim,
            actual: cem.len(),
        });
    }
    let (nv, np) = (ops.n_velocity(), ops.n_pressure());

    // 𝒜, block by block over groups of functions with a common support
    let mut groups: BTreeMap<ElementWindow, Vec<usize>> = BTreeMap::new();
    for (i, f) in cem.functions.iter().enumerate() {
        groups.entry(f.window()).or_default().push(i);
    }
    let groups: Vec<(ElementWindow, Vec<usize>)> = groups.into_iter().collect();
    let psi_blocks: Vec<Mat<f64>> = groups
        .iter()
        .map(|(_, idx)| {
            let dofs = cem.functions[idx[0]].support.velocity_dofs().len();
            Mat::from_fn(dofs, idx.len(), |r, c| cem.functions[idx[c]].velocity[r])
        })
        .collect();
    let mut a_red = Mat::<f64>::zeros(dim, dim);
    for (w2, idx2) in &groups {
        for chunk in idx2.chunks(BLOCK_COLUMNS) {
            let mut y = Mat::<f64>::zeros(nv, chunk.len());
            for (col, &m) in chunk.iter().enumerate() {
                let f = &cem.functions[m];
                for (&e, &x) in f.support.velocity_dofs().iter().zip(&f.velocity) {
                    for (e2, a) in ops.a.row(e) {
                        y[(e2, col)] += a * x;
                    }
                }
            }
            for ((w1, idx1), psi1) in groups.iter().zip(&psi_blocks) {
                if !w1.overlaps(w2) {
                    continue;
                }
                let dofs1 = cem.functions[idx1[0]].support.velocity_dofs();
                let yg = Mat::from_fn(dofs1.len(), chunk.len(), |r, c| y[(dofs1[r], c)]);
                let block = psi1.transpose() * &yg;
                for (r, &i) in idx1.iter().enumerate() {
                    for (c, &j) in chunk.iter().enumerate() {
                        a_red[(i, j)] = block[(r, c)];
                    }
                }
            }
        }
    }
    symmetrize(&mut a_red);

    // ℬ
    let mut b_red = Mat::<f64>::zeros(dim, dim);
    let mut z = vec![0.0; np];
    for (m, f) in cem.functions.iter().enumerate() {
        z.iter_mut().for_each(|v| *v = 0.0);
        for (&e, &x) in f.support.velocity_dofs().iter().zip(&f.velocity) {
            let (minus, plus) = edge_cells_from_b(ops, e);
            z[minus.0] += minus.1 * x;
            z[plus.0] += plus.1 * x;
        }
        for &k in f.support.elements() {
            let spec = spectral.element(k);
            for (j, p) in spectral.selected(k).iter().enumerate() {
                b_red[(m, spectral.index(k, j))] = spec.cells.iter().zip(p).map(|(&c, v)| z[c] * v).sum();
            }
        }
    }

    // ℳ
    let mut m_red = Mat::<f64>::zeros(dim, dim);
    for k in 0..spectral.n_elements() {
        let spec = spectral.element(k);
        let sel = spectral.selected(k);
        for (i, pi) in sel.iter().enumerate() {
            for (j, pj) in sel.iter().enumerate() {
                m_red[(spectral.index(k, i), spectral.index(k, j))] =
                    spec.cells.iter().zip(pi).zip(pj).map(|((&c, a), b)| ops.m_rho[c] * a * b).sum();
            }
        }
    }

    let (a_pinv, dropped) = psd_pseudo_inverse(a_red.as_ref(), PSEUDO_INVERSE_CUTOFF, "solver")?;
    Ok(ReducedSystem {
        a: a_red,
        b: b_red,
        m: m_red,
        a_pinv,
        dropped,
        cem,
        spectral,
        n_edges: nv,
        n_cells: np,
        cell_area: ops.cell_area,
    })
}

/// The two `(cell, B entry)` pairs of column `e` of `B`.
fn edge_cells_from_b(ops: &FineOperators, e: usize) -> ((usize, f64), (usize, f64)) {
    let col = ops.bt_col(e);
    (col[0], col[1])
}

fn symmetrize(m: &mut Mat<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Reduced backward Euler starting from `π(h_p)` and the projection of `h_v`.
pub fn backward_euler(sys: &ReducedSystem, ops: &FineOperators, spec: &SourceSpec, tau: f64, t_final: f64) -> Result<Trajectory> {
    let p0 = sys.project_pressure(&spec.initial_pressure);
    let v0 = sys.project_velocity(ops, &spec.initial_velocity);
    backward_euler_from(sys, spec, tau, t_final, p0, v0)
}

/// Reduced backward Euler from explicit initial coefficients.
pub fn backward_euler_from(
    sys: &ReducedSystem,
    spec: &SourceSpec,
    tau: f64,
    t_final: f64,
    p0: Vec<f64>,
    v0: Vec<f64>,
) -> Result<Trajectory> {
    let n_steps = step_count(tau, t_final)?;
    let dim = sys.dim();
    Error::check_len("initial pressure coefficients", dim, p0.len())?;
    Error::check_len("initial velocity coefficients", dim, v0.len())?;

    // X = 𝒜⁺ ℬ and K = ℳ/τ + ℬᵀ X
    let x = &sys.a_pinv * &sys.b;
    let mut k = sys.b.transpose() * &x;
    for i in 0..dim {
        for j in 0..dim {
            k[(i, j)] += sys.m[(i, j)] / tau;
        }
    }
    symmetrize(&mut k);
    let chol = DenseCholesky::factor(k.as_ref(), "solver")?;

    let mut traj = Trajectory {
        kind: TrajectoryKind::Multiscale,
        tau,
        times: vec![0.0],
        velocity: vec![v0],
        pressure: vec![p0],
    };
    for n in 1..=n_steps {
        let time = n as f64 * tau;
        let f = sys.reduced_load(&spec.source_at(time));
        let mp = mat_vec(&sys.m, traj.pressure.last().unwrap());
        let rhs: Vec<f64> = mp.iter().zip(&f).map(|(a, b)| a / tau + b).collect();
        let p = refined_solve(|y| mat_vec(&k, y), |r| chol.solve(r), &rhs, "solver", n)?;
        let v = mat_vec(&x, &p);
        traj.times.push(time);
        traj.velocity.push(v);
        traj.pressure.push(p);
    }
    Ok(traj)
}

/// Expands a multiscale trajectory onto the fine grid.
pub fn prolongate(sys: &ReducedSystem, traj: &Trajectory) -> Result<Trajectory> {
    if traj.kind != TrajectoryKind::Multiscale {
        return Err(Error::InvalidArgument("only multiscale coefficient trajectories can be prolongated".into()));
    }
    Ok(Trajectory {
        kind: TrajectoryKind::Prolongated,
        tau: traj.tau,
        times: traj.times.clone(),
        velocity: traj.velocity.iter().map(|c| sys.velocity_to_fine(c)).collect(),
        pressure: traj.pressure.iter().map(|c| sys.pressure_to_fine(c)).collect(),
    })
}
