//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run with `cargo test -p cemgms --test acceptance`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cemgms::cem::{build_pi, build_velocity_space};
use cemgms::experiment::auto_layers;
use cemgms::fields::{generate_channelized, two_patch_source, PermeabilityField, SourceSpec, SourceTerm};
use cemgms::grid::{CoarsePartition, FineGrid, Subdomain};
use cemgms::metrics::{error_series, ErrorSeries};
use cemgms::pou::{compute_kappa_tilde, solve_pou, KappaTilde};
use cemgms::rt0::{assemble_divergence, assemble_global, assemble_pressure_mass, assemble_velocity_mass, FineOperators};
use cemgms::solver::{
    assemble_reduced, backward_euler, prolongate, solve_fine_reference, stability_bound, ReducedSystem, Trajectory,
};
use cemgms::spectral::{select_basis, solve_all_spectral, ElementSpectrum};
use cemgms::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Worst values seen by the checks that run alongside every experiment.
struct Audit {
    rng: ChaCha8Rng,
    stability: Vec<(String, f64, f64)>,
    lambda1: f64,
    const_dev: f64,
    orth: f64,
    eig_res: f64,
    elements: usize,
    oracle_elements: usize,
    pi_idem: f64,
    pi_adj: f64,
    pi_runs: usize,
}

impl Audit {
    fn new() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0xacce97),
            stability: Vec::new(),
            lambda1: 0.0,
            const_dev: 0.0,
            orth: 0.0,
            eig_res: 0.0,
            elements: 0,
            oracle_elements: 0,
            pi_idem: 0.0,
            pi_adj: 0.0,
            pi_runs: 0,
        }
    }

    fn fine_stability(&mut self, label: &str, ops: &FineOperators, spec: &SourceSpec, traj: &Trajectory) -> Result<()> {
        let bound = stability_bound(ops, spec, traj.tau, *traj.times.last().unwrap())?;
        let max = traj.pressure.iter().map(|p| ops.rho_norm_sq(p)).fold(0.0, f64::max);
        self.stability.push((format!("{label} fine"), max, bound));
        Ok(())
    }

    fn ms_stability(&mut self, label: &str, ops: &FineOperators, spec: &SourceSpec, sys: &ReducedSystem, ms: &Trajectory) -> Result<()> {
        let bound = stability_bound(ops, spec, ms.tau, *ms.times.last().unwrap())?;
        let max = ms.pressure.iter().map(|p| sys.m_norm_sq(p)).fold(0.0, f64::max);
        self.stability.push((format!("{label} ms"), max, bound));
        Ok(())
    }

    /// Structure of every element's spectrum, plus the dense oracle on one
    /// randomly chosen element.
    fn spectra(&mut self, fine: &FineGrid, field: &PermeabilityField, kt: &KappaTilde, spectra: &[ElementSpectrum]) {
        for s in spectra {
            self.elements += 1;
            self.lambda1 = self.lambda1.max(s.eigenvalues[0].abs());
            let p1 = &s.eigenvectors[0];
            let scale = p1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let dev = p1.iter().fold(0.0f64, |m, v| m.max((v - p1[0]).abs())) / scale;
            self.const_dev = self.const_dev.max(dev);
            for i in 0..s.len() {
                for j in 0..=i {
                    let g = s.s_dot(&s.eigenvectors[i], &s.eigenvectors[j]);
                    let want = if i == j { 1.0 } else { 0.0 };
                    self.orth = self.orth.max((g - want).abs());
                }
            }
        }
        let k = self.rng.random_range(0..spectra.len());
        let s = &spectra[k];
        let (a, b, _) = rt0_oracle(fine, field, &s.cells);
        let bt = transpose(&b);
        let x = dense_solve(&a, &bt);
        let g = matmul(&b, &x);
        let s_diag: Vec<f64> = s.cells.iter().map(|&c| kt.get(c) * fine.cell_area()).collect();
        let g_norm = inf_norm(&g);
        let s_norm = s_diag.iter().fold(0.0f64, |m, v| m.max(*v));
        for (lam, p) in s.eigenvalues.iter().zip(&s.eigenvectors) {
            let gp = matvec(&g, p);
            let r = gp
                .iter()
                .zip(&s_diag)
                .zip(p)
                .fold(0.0f64, |m, ((gp, sd), p)| m.max((gp - lam * sd * p).abs()));
            let p_norm = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            self.eig_res = self.eig_res.max(r / ((g_norm + lam.abs() * s_norm) * p_norm));
        }
        self.oracle_elements += 1;
    }

    fn pi(&mut self, part: &CoarsePartition, sys: &ReducedSystem) -> Result<()> {
        let whole = part.whole();
        let pi = build_pi(sys.spectral(), &whole)?;
        for _ in 0..3 {
            let q: Vec<f64> = (0..pi.dim()).map(|_| self.rng.random_range(-1.0..1.0)).collect();
            let r: Vec<f64> = (0..pi.dim()).map(|_| self.rng.random_range(-1.0..1.0)).collect();
            let pq = pi.apply(&q);
            let ppq = pi.apply(&pq);
            let sn = |x: &[f64]| pi.s_inner(x, x).sqrt();
            let idem = sn(&pq.iter().zip(&ppq).map(|(a, b)| a - b).collect::<Vec<_>>()) / sn(&q);
            let pr = pi.apply(&r);
            let adj = (pi.s_inner(&pq, &r) - pi.s_inner(&q, &pr)).abs() / (sn(&q) * sn(&r));
            self.pi_idem = self.pi_idem.max(idem);
            self.pi_adj = self.pi_adj.max(adj);
        }
        self.pi_runs += 1;
        Ok(())
    }
}

// ---- independent oracles ----------------------------------------------------

const GAUSS2: [(f64, f64); 2] = [(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)];

/// RT0 mass and divergence on the cells `cells` (ascending), by 2-point
/// Gauss quadrature of the edge shape functions. Returns dense `A`, dense `B`
/// (cells × edges) and the global ids of the interior edges, ascending.
fn rt0_oracle(fine: &FineGrid, field: &PermeabilityField, cells: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>) {
    let inside = |ix: usize, iy: usize| ix < fine.nx() && iy < fine.ny() && cells.binary_search(&fine.cell(ix, iy)).is_ok();
    let mut edges = Vec::new();
    for &c in cells {
        let (ix, iy) = fine.cell_ij(c);
        if inside(ix + 1, iy) {
            edges.push(fine.x_edge(ix, iy));
        }
        if inside(ix, iy + 1) {
            edges.push(fine.y_edge(ix, iy));
        }
    }
    edges.sort_unstable();
    let local = |e: usize| edges.binary_search(&e).unwrap();
    let n = edges.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![vec![0.0; n]; cells.len()];
    for (lc, &c) in cells.iter().enumerate() {
        let (ix, iy) = fine.cell_ij(c);
        let ((x0, y0), (x1, y1)) = fine.cell_bounds(c);
        let (hx, hy) = (x1 - x0, y1 - y0);
        // (local edge, shape function, divergence) for each face of c
        type Shape = Box<dyn Fn(f64, f64) -> (f64, f64)>;
        let mut shapes: Vec<(usize, Shape, f64)> = Vec::new();
        if ix > 0 && inside(ix - 1, iy) {
            shapes.push((local(fine.x_edge(ix - 1, iy)), Box::new(move |x, _| ((x1 - x) / hx, 0.0)), -1.0 / hx));
        }
        if inside(ix + 1, iy) {
            shapes.push((local(fine.x_edge(ix, iy)), Box::new(move |x, _| ((x - x0) / hx, 0.0)), 1.0 / hx));
        }
        if iy > 0 && inside(ix, iy - 1) {
            shapes.push((local(fine.y_edge(ix, iy - 1)), Box::new(move |_, y| (0.0, (y1 - y) / hy)), -1.0 / hy));
        }
        if inside(ix, iy + 1) {
            shapes.push((local(fine.y_edge(ix, iy)), Box::new(move |_, y| (0.0, (y - y0) / hy)), 1.0 / hy));
        }
        let k_inv = 1.0 / field.get(c);
        for (gx, wx) in GAUSS2 {
            for (gy, wy) in GAUSS2 {
                let x = x0 + 0.5 * hx * (1.0 + gx);
                let y = y0 + 0.5 * hy * (1.0 + gy);
                let w = wx * wy * 0.25 * hx * hy;
                for (i, fi, di) in &shapes {
                    let (ui, vi) = fi(x, y);
                    b[lc][*i] += w * di;
                    for (j, fj, _) in &shapes {
                        let (uj, vj) = fj(x, y);
                        a[*i][*j] += w * k_inv * (ui * uj + vi * vj);
                    }
                }
            }
        }
    }
    (a, b, edges)
}

/// Gaussian elimination with partial pivoting, `A X = R`.
fn dense_solve(a: &[Vec<f64>], r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = r[0].len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut x: Vec<Vec<f64>> = r.to_vec();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        x.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                for j in 0..m {
                    x[i][j] -= f * x[k][j];
                }
            }
        }
    }
    for k in (0..n).rev() {
        for j in 0..m {
            let s: f64 = (k + 1..n).map(|i| a[k][i] * x[i][j]).sum();
            x[k][j] = (x[k][j] - s) / a[k][k];
        }
    }
    x
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn inf_norm(a: &[Vec<f64>]) -> f64 {
    a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

// ---- pipeline helpers -------------------------------------------------------

struct Coarse {
    part: CoarsePartition,
    spectra: Vec<ElementSpectrum>,
}

fn coarse(fine: &FineGrid, field: &PermeabilityField, nc: usize, audit: &mut Audit) -> Result<Coarse> {
    let part = CoarsePartition::new(fine, nc, nc)?;
    let pou = solve_pou(fine, &part, field)?;
    let kt = compute_kappa_tilde(field, &pou)?;
    let spectra = solve_all_spectral(&part, field, &kt)?;
    audit.spectra(fine, field, &kt, &spectra);
    Ok(Coarse { part, spectra })
}

struct MsRun {
    sys: ReducedSystem,
    ms: Trajectory,
    errors: ErrorSeries,
}

#[allow(clippy::too_many_arguments)]
fn multiscale(
    label: &str,
    ops: &FineOperators,
    field: &PermeabilityField,
    spec: &SourceSpec,
    reference: &Trajectory,
    c: &Coarse,
    lz: usize,
    layers: usize,
    audit: &mut Audit,
) -> Result<MsRun> {
    let basis = select_basis(c.spectra.clone(), lz)?;
    let cem = build_velocity_space(&c.part, field, &basis, layers)?;
    let sys = assemble_reduced(ops, cem, basis)?;
    let tau = reference.tau;
    let ms = backward_euler(&sys, ops, spec, tau, *reference.times.last().unwrap())?;
    let errors = error_series(ops, reference, &prolongate(&sys, &ms)?)?;
    audit.pi(&c.part, &sys)?;
    audit.ms_stability(label, ops, spec, &sys, &ms)?;
    Ok(MsRun { sys, ms, errors })
}

fn sci(v: &[f64], digits: usize) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.digits$e}")).collect();
    format!("[{}]", items.join(", "))
}

fn terminal(e: &ErrorSeries) -> (f64, f64) {
    let (v, p) = e.terminal();
    (v.unwrap_or(f64::NAN), p.unwrap_or(f64::NAN))
}

// ---- criteria ---------------------------------------------------------------

fn manufactured(audit: &mut Audit) -> Result<Verdict> {
    let start = Instant::now();
    let (tau, t_final) = (1e-4, 0.1);
    let exact = |x: f64, y: f64, t: f64| (-t).exp() * (PI * x).cos() * (PI * y).cos();
    // cell average of cos(πx) over [a, b]
    let avg_cos = |a: f64, b: f64| ((PI * b).sin() - (PI * a).sin()) / (PI * (b - a));
    let gauss3 = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
    let mut errs = Vec::new();
    for n in [16, 32, 64] {
        let fine = FineGrid::new(n, n)?;
        let field = PermeabilityField::uniform(n, n, 1.0)?;
        let cell_avg: Vec<f64> = (0..fine.n_cells())
            .map(|c| {
                let ((x0, y0), (x1, y1)) = fine.cell_bounds(c);
                avg_cos(x0, x1) * avg_cos(y0, y1)
            })
            .collect();
        // −∇p(0) averaged over each edge
        let h_v: Vec<f64> = (0..fine.n_edges())
            .map(|e| {
                let (minus, _) = fine.edge_cells(e);
                let ((x0, y0), (x1, y1)) = fine.cell_bounds(minus);
                if e < fine.n_x_edges() {
                    PI * (PI * x1).sin() * avg_cos(y0, y1)
                } else {
                    PI * (PI * y1).sin() * avg_cos(x0, x1)
                }
            })
            .collect();
        let spec = SourceSpec {
            source: SourceTerm::Separable {
                profile: cell_avg.iter().map(|v| (2.0 * PI * PI - 1.0) * v).collect(),
                temporal: |t| (-t).exp(),
            },
            rho: vec![1.0; fine.n_cells()],
            initial_pressure: cell_avg.clone(),
            initial_velocity: h_v,
        };
        let ops = assemble_global(&fine, &field, &spec.rho)?;
        let traj = solve_fine_reference(&ops, &spec, tau, t_final)?;
        audit.fine_stability(&format!("manufactured {n}"), &ops, &spec, &traj)?;
        let p = traj.pressure.last().unwrap();
        let mut e2 = 0.0;
        for c in 0..fine.n_cells() {
            let ((x0, y0), (x1, y1)) = fine.cell_bounds(c);
            for (gx, wx) in gauss3 {
                for (gy, wy) in gauss3 {
                    let x = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * gx;
                    let y = 0.5 * (y0 + y1) + 0.5 * (y1 - y0) * gy;
                    let w = 0.25 * wx * wy * fine.cell_area();
                    e2 += w * (p[c] - exact(x, y, t_final)).powi(2);
                }
            }
        }
        errs.push(e2.sqrt());
    }
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let secs = start.elapsed().as_secs_f64();
    let errs_s3 = sci(&errs, 3);
    Ok(verdict(
        orders.iter().all(|&o| o >= 0.9) && secs < 30.0,
        format!("L2 errors {errs_s3}, orders {orders:.3?} (>= 0.9), {secs:.1}s (< 30s)"),
    ))
}

fn oracle_equivalence(audit: &mut Audit) -> Result<Verdict> {
    let n = 32;
    let fine = FineGrid::new(n, n)?;
    let field = generate_channelized(n, n, 4, 1e4, 11)?;
    let spec = two_patch_source(n, n)?;
    let ops = assemble_global(&fine, &field, &spec.rho)?;
    let reference = solve_fine_reference(&ops, &spec, 1e-2, 1.0)?;
    audit.fine_stability("oracle", &ops, &spec, &reference)?;
    let c = coarse(&fine, &field, 4, audit)?;
    let full = c.spectra[0].len();
    let run = multiscale("oracle", &ops, &field, &spec, &reference, &c, full, 4, audit)?;
    let (ev, ep) = terminal(&run.errors);
    Ok(verdict(
        ev <= 1e-8 && ep <= 1e-8,
        format!("fine 32x32, coarse 4x4, Lz = {full}, l = 4: e_v(T) = {ev:.2e}, e_p(T) = {ep:.2e} (<= 1e-8)"),
    ))
}

fn energy(audit: &mut Audit) -> Result<Verdict> {
    let n = 32;
    let fine = FineGrid::new(n, n)?;
    let field = generate_channelized(n, n, 4, 1e4, 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut h: Vec<f64> = (0..fine.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    h.iter_mut().for_each(|v| *v -= mean);
    let spec = SourceSpec {
        initial_pressure: h,
        ..SourceSpec::zero(&fine)
    };
    let (tau, t_final) = (1e-2, 0.2);
    let ops = assemble_global(&fine, &field, &spec.rho)?;
    let reference = solve_fine_reference(&ops, &spec, tau, t_final)?;
    audit.fine_stability("energy", &ops, &spec, &reference)?;
    let c = coarse(&fine, &field, 4, audit)?;
    let run = multiscale("energy", &ops, &field, &spec, &reference, &c, 3, 2, audit)?;

    let fine_norms: Vec<f64> = reference.pressure.iter().map(|p| ops.rho_norm_sq(p)).collect();
    let ms_norms: Vec<f64> = run.ms.pressure.iter().map(|p| run.sys.m_norm_sq(p)).collect();
    let decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let ratio = |v: &[f64]| v.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    Ok(verdict(
        decreasing(&fine_norms) && decreasing(&ms_norms),
        format!(
            "f = 0, random zero-mean h_p, contrast 1e4, {} steps: max ratio ||p(n+1)||^2/||p(n)||^2 fine {:.6}, ms {:.6} (< 1)",
            reference.n_steps(),
            ratio(&fine_norms),
            ratio(&ms_norms)
        ),
    ))
}

fn stability(audit: &Audit) -> Verdict {
    let worst = audit
        .stability
        .iter()
        .max_by(|a, b| (a.1 / a.2).total_cmp(&(b.1 / b.2)))
        .expect("stability samples");
    let pass = audit.stability.iter().all(|(_, m, b)| m <= b);
    verdict(
        pass,
        format!(
            "{} trajectories; tightest: {} with max ||p||^2 = {:.3e} vs bound {:.3e}",
            audit.stability.len(),
            worst.0,
            worst.1,
            worst.2
        ),
    )
}

struct Channelized {
    field: PermeabilityField,
    ops: FineOperators,
    spec: SourceSpec,
    reference: Trajectory,
    h10: Option<Coarse>,
    runs: BTreeMap<(usize, usize), (f64, f64)>,
}

fn channelized_setup(audit: &mut Audit) -> Result<Channelized> {
    let n = 80;
    let fine = FineGrid::new(n, n)?;
    let field = generate_channelized(n, n, 5, 1e4, 2024)?;
    let spec = two_patch_source(n, n)?;
    let ops = assemble_global(&fine, &field, &spec.rho)?;
    let reference = solve_fine_reference(&ops, &spec, 1e-2, 1.0)?;
    audit.fine_stability("channelized", &ops, &spec, &reference)?;
    Ok(Channelized { field, ops, spec, reference, h10: None, runs: BTreeMap::new() })
}

fn h_trend(ch: &mut Channelized, audit: &mut Audit) -> Result<Verdict> {
    let start = Instant::now();
    let fine = FineGrid::new(80, 80)?;
    let mut ev = Vec::new();
    let mut ep = Vec::new();
    let mut used = Vec::new();
    for nc in [5, 10, 20] {
        let c = coarse(&fine, &ch.field, nc, audit)?;
        let layers = auto_layers(ch.field.contrast(), &c.part);
        let run = multiscale(&format!("H = 1/{nc}"), &ch.ops, &ch.field, &ch.spec, &ch.reference, &c, 2, layers, audit)?;
        let (v, p) = terminal(&run.errors);
        ev.push(v);
        ep.push(p);
        used.push(layers);
        if nc == 10 {
            ch.runs.insert((2, layers), (v, p));
            ch.h10 = Some(c);
        }
    }
    let factors: Vec<f64> = ev.windows(2).map(|w| w[0] / w[1]).collect();
    let secs = start.elapsed().as_secs_f64();
    let (ev_s3, ep_s3) = (sci(&ev, 3), sci(&ep, 3));
    Ok(verdict(
        factors.iter().all(|&f| f >= 2.0) && secs < 300.0,
        format!(
            "H = 1/5, 1/10, 1/20 (layers {used:?}): e_v(T) {ev_s3}, reduction factors {factors:.2?} (>= 2); e_p(T) {ep_s3}; {secs:.0}s (< 300s)"
        ),
    ))
}

fn ms_point(ch: &mut Channelized, lz: usize, layers: usize, audit: &mut Audit) -> Result<(f64, f64)> {
    if let Some(&e) = ch.runs.get(&(lz, layers)) {
        return Ok(e);
    }
    let c = ch.h10.as_ref().expect("H = 1/10 spectra");
    let label = format!("H = 1/10, Lz = {lz}, l = {layers}");
    let run = multiscale(&label, &ch.ops, &ch.field, &ch.spec, &ch.reference, c, lz, layers, audit)?;
    let e = terminal(&run.errors);
    ch.runs.insert((lz, layers), e);
    Ok(e)
}

fn oversampling(ch: &mut Channelized, audit: &mut Audit) -> Result<Verdict> {
    let mut ev = Vec::new();
    for l in 1..=5 {
        ev.push(ms_point(ch, 2, l, audit)?.0);
    }
    let first = ev[1] / ev[0];
    let last = (ev[4] - ev[3]).abs() / ev[3];
    let ev_s4 = sci(&ev, 4);
    Ok(verdict(
        first <= 0.5 && last < 0.1,
        format!("H = 1/10, Lz = 2, l = 1..5: e_v(T) {ev_s4}; e_v(2)/e_v(1) = {first:.3} (<= 0.5), |change| 4 -> 5 = {:.3}% (< 10%)", 100.0 * last),
    ))
}

fn enrichment(ch: &mut Channelized, audit: &mut Audit) -> Result<Verdict> {
    let layers = 3;
    let mut ev = Vec::new();
    let mut ep = Vec::new();
    for lz in 1..=4 {
        let (v, p) = ms_point(ch, lz, layers, audit)?;
        ev.push(v);
        ep.push(p);
    }
    let (ev_s4, ep_s4) = (sci(&ev, 4), sci(&ep, 4));
    let ok = |e: &[f64]| e.windows(2).all(|w| w[1] <= 1.05 * w[0]);
    Ok(verdict(
        ok(&ev) && ok(&ep),
        format!("H = 1/10, l = {layers}, Lz = 1..4: e_v(T) {ev_s4}, e_p(T) {ep_s4} (each <= 1.05 x previous)"),
    ))
}

fn spectral_structure(audit: &Audit) -> Verdict {
    let pass = audit.lambda1 <= 1e-10 && audit.const_dev <= 1e-10 && audit.orth <= 1e-10 && audit.eig_res <= 1e-9;
    verdict(
        pass,
        format!(
            "{} elements: max |lambda_1| {:.1e}, first-mode deviation from constant {:.1e}, s-orthonormality {:.1e} (<= 1e-10); dense-oracle residual {:.1e} on {} elements (<= 1e-9)",
            audit.elements, audit.lambda1, audit.const_dev, audit.orth, audit.eig_res, audit.oracle_elements
        ),
    )
}

fn projection(audit: &Audit) -> Verdict {
    verdict(
        audit.pi_idem <= 1e-11 && audit.pi_adj <= 1e-11 && audit.pi_runs > 0,
        format!(
            "{} runs: idempotence {:.1e}, s-self-adjointness {:.1e} (<= 1e-11)",
            audit.pi_runs, audit.pi_idem, audit.pi_adj
        ),
    )
}

fn assembly() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst = 0.0f64;
    let mut entries = 0usize;
    let trials = 25;
    for trial in 0..trials {
        let (nx, ny) = (rng.random_range(4..10), rng.random_range(4..10));
        let extent = (rng.random_range(0.2..3.0), rng.random_range(0.2..3.0));
        let origin = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let fine = FineGrid::with_domain(nx, ny, origin, extent)?;
        let kappa: Vec<f64> = (0..nx * ny).map(|_| 10f64.powf(rng.random_range(-4.0..4.0))).collect();
        let rho: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(0.1..10.0)).collect();
        let field = PermeabilityField::new(nx, ny, kappa)?;
        let sub = if trial == 0 {
            Subdomain::whole_grid(&fine)
        } else {
            let (ox, oy) = (rng.random_range(0..=nx - 4), rng.random_range(0..=ny - 4));
            Subdomain::from_cells(&fine, (0..16).map(|i| fine.cell(ox + i % 4, oy + i / 4)))?
        };
        let (a_ref, b_ref, edges) = rt0_oracle(&fine, &field, sub.cells());
        let a = assemble_velocity_mass(&fine, &field, &sub)?;
        let b = assemble_divergence(&fine, &sub);
        let m = assemble_pressure_mass(&fine, &rho, &sub)?;
        assert_eq!(a.row_dofs, edges, "edge sets differ");
        let mut check = |got: f64, want: f64| {
            entries += 1;
            let rel = if want == 0.0 {
                if got == 0.0 { 0.0 } else { f64::INFINITY }
            } else {
                (got - want).abs() / want.abs()
            };
            worst = worst.max(rel);
        };
        for i in 0..edges.len() {
            for j in 0..edges.len() {
                check(a.matrix.get(i, j), a_ref[i][j]);
            }
        }
        for (lc, &c) in sub.cells().iter().enumerate() {
            for j in 0..edges.len() {
                check(b.matrix.get(lc, j), b_ref[lc][j]);
            }
            let ((x0, y0), (x1, y1)) = fine.cell_bounds(c);
            let mut mass = 0.0;
            for (_, wx) in GAUSS2 {
                for (_, wy) in GAUSS2 {
                    mass += wx * wy * 0.25 * (x1 - x0) * (y1 - y0) * rho[c];
                }
            }
            for (lc2, _) in sub.cells().iter().enumerate() {
                check(m.matrix.get(lc, lc2), if lc == lc2 { mass } else { 0.0 });
            }
        }
    }
    Ok(verdict(
        worst <= 1e-13,
        format!("{trials} random grids (one whole, the rest 4x4 subgrids), {entries} entries: max relative deviation {worst:.1e} (<= 1e-13)"),
    ))
}

fn main() -> ExitCode {
    let names = [
        "reference solver order",
        "oracle equivalence",
        "energy dissipation",
        "stability bound",
        "H-convergence trend",
        "oversampling decay",
        "basis enrichment",
        "spectral structure",
        "pi projection",
        "assembly oracles",
    ];
    let mut results: Vec<Option<Verdict>> = (0..10).map(|_| None).collect();
    let fail = |e: cemgms::Error| verdict(false, format!("error: {e}"));
    let mut audit = Audit::new();

    results[0] = Some(manufactured(&mut audit).unwrap_or_else(fail));
    results[1] = Some(oracle_equivalence(&mut audit).unwrap_or_else(fail));
    results[2] = Some(energy(&mut audit).unwrap_or_else(fail));
    match channelized_setup(&mut audit) {
        Ok(mut ch) => {
            results[4] = Some(h_trend(&mut ch, &mut audit).unwrap_or_else(fail));
            if ch.h10.is_some() {
                results[5] = Some(oversampling(&mut ch, &mut audit).unwrap_or_else(fail));
                results[6] = Some(enrichment(&mut ch, &mut audit).unwrap_or_else(fail));
            }
        }
        Err(e) => results[4] = Some(fail(e)),
    }
    results[3] = Some(stability(&audit));
    results[7] = Some(spectral_structure(&audit));
    results[8] = Some(projection(&audit));
    results[9] = Some(assembly().unwrap_or_else(fail));

    let mut failed = 0;
    for (i, (name, r)) in names.iter().zip(results).enumerate() {
        let r = r.unwrap_or_else(|| verdict(false, "not run".into()));
        if !r.pass {
            failed += 1;
        }
        println!("criterion {:2} {}: {} | {}", i + 1, if r.pass { "PASS" } else { "FAIL" }, name, r.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
