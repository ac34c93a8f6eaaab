//! End-to-end runs: configuration, the field → basis → solve → error
//! pipeline, parameter sweeps and their CSV reports.
//!
//! Config files are flat `key = value` text; `#` starts a comment. Keys:
//!
//! | key        | meaning                                                  |
//! |------------|----------------------------------------------------------|
//! | `field`    | `channelized`, `uniform` or `raster`                     |
//! | `raster`   | path of a raster file (implies `field = raster`)          |
//! | `channels`, `contrast`, `seed` | channelized generator parameters    |
//! | `invert`   | `true` replaces κ by 1/κ                                  |
//! | `nx`, `ny` | fine cells per axis (`ny` defaults to `nx`)               |
//! | `Nx`, `Ny` | coarse elements per axis (`Ny` defaults to `Nx`)          |
//! | `Lz`       | selected eigenfunctions per element                       |
//! | `layers`   | oversampling layers, an integer or `auto`                 |
//! | `tau`, `T` | time step and final time                                  |
//! | `rho`      | uniform density                                           |
//! | `source`   | `two_patch` or `zero`                                     |
//! | `out`      | output directory                                          |
//! | `sweep`    | `Lz:2,3,4`, `layers:1,2,3` or `H:1/5,1/10,1/20`           |
//! | `snapshots`| comma-separated step indices to dump                      |
//! | `cache`    | directory for the eigenpair cache                         |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::cem::build_velocity_space;
use crate::error::{Error, Result};
use crate::fields::{generate_channelized, invert_field, load_raster, two_patch_source, PermeabilityField, SourceSpec};
use crate::grid::{CoarsePartition, FineGrid};
use crate::metrics::{error_series, ErrorSeries};
use crate::pou::{compute_kappa_tilde, solve_pou};
use crate::rt0::{assemble_global, FineOperators};
use crate::solver::{assemble_reduced, backward_euler, prolongate, solve_fine_reference, write_atomic, Trajectory};
use crate::spectral::{load_spectra, save_spectra, select_basis, solve_all_spectral, ElementSpectrum};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq)]
pub enum FieldSpec {
    Channelized { channels: usize, contrast: f64, seed: u64 },
    Uniform,
    Raster(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layers {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    TwoPatch,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lz,
    Layers,
    H,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lz => "Lz",
            SweepParam::Layers => "layers",
            SweepParam::H => "H",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    /// Integer settings: `L_z`, `l`, or the coarse count `N` for `H = 1/N`.
    pub values: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub field: FieldSpec,
    pub invert: bool,
    pub nx: usize,
    pub ny: usize,
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub lz: usize,
    pub layers: Layers,
    pub tau: f64,
    pub t_final: f64,
    pub rho: f64,
    pub source: SourceKind,
    pub out: Option<PathBuf>,
    pub sweep: Option<Sweep>,
    pub snapshots: Vec<usize>,
    pub cache: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            field: FieldSpec::Channelized {
                channels: 5,
                contrast: 1e4,
                seed: 2024,
            },
            invert: false,
            nx: 80,
            ny: 80,
            coarse_nx: 10,
            coarse_ny: 10,
            lz: 2,
            layers: Layers::Auto,
            tau: 1e-2,
            t_final: 1.0,
            rho: 1.0,
            source: SourceKind::TwoPatch,
            out: None,
            sweep: None,
            snapshots: Vec::new(),
            cache: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// `1/5`, `0.2` or `5` all mean five coarse elements per axis.
fn parse_h(value: &str) -> Result<usize> {
    let v = value.trim();
    let n = if let Some(d) = v.strip_prefix("1/") {
        parse_num::<usize>("H", d)?
    } else if v.contains('.') || v.contains('e') {
        let h: f64 = parse_num("H", v)?;
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::Config(format!("`H`: {v} is not in (0, 1]")));
        }
        let n = (1.0 / h).round();
        if (n * h - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("`H`: {v} is not the reciprocal of an integer")));
        }
        n as usize
    } else {
        parse_num::<usize>("H", v)?
    };
    if n == 0 {
        return Err(Error::Config("`H`: coarse count must be positive".into()));
    }
    Ok(n)
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let channel_params = |f: &FieldSpec| match f {
            FieldSpec::Channelized { channels, contrast, seed } => (*channels, *contrast, *seed),
            _ => (5, 1e4, 2024),
        };
        match key {
            "field" => {
                self.field = match value {
                    "channelized" => {
                        let (channels, contrast, seed) = channel_params(&self.field);
                        FieldSpec::Channelized { channels, contrast, seed }
                    }
                    "uniform" => FieldSpec::Uniform,
                    "raster" => match &self.field {
                        FieldSpec::Raster(_) => self.field.clone(),
                        _ => return Err(Error::Config("`field = raster` needs a `raster` path".into())),
                    },
                    other => match other.strip_prefix("raster:") {
                        Some(p) => FieldSpec::Raster(PathBuf::from(p)),
                        None => FieldSpec::Raster(PathBuf::from(other)),
                    },
                }
            }
            "raster" => self.field = FieldSpec::Raster(PathBuf::from(value)),
            "channels" | "contrast" | "seed" => {
                let (mut channels, mut contrast, mut seed) = channel_params(&self.field);
                match key {
                    "channels" => channels = parse_num(key, value)?,
                    "contrast" => contrast = parse_num(key, value)?,
                    _ => seed = parse_num(key, value)?,
                }
                self.field = FieldSpec::Channelized { channels, contrast, seed };
            }
            "invert" => self.invert = parse_num(key, value)?,
            "nx" => {
                self.nx = parse_num(key, value)?;
                self.ny = self.nx;
            }
            "ny" => self.ny = parse_num(key, value)?,
            "Nx" => {
                self.coarse_nx = parse_num(key, value)?;
                self.coarse_ny = self.coarse_nx;
            }
            "Ny" => self.coarse_ny = parse_num(key, value)?,
            "H" => {
                self.coarse_nx = parse_h(value)?;
                self.coarse_ny = self.coarse_nx;
            }
            "Lz" => self.lz = parse_num(key, value)?,
            "layers" => {
                self.layers = if value == "auto" {
                    Layers::Auto
                } else {
                    Layers::Fixed(parse_num(key, value)?)
                }
            }
            "tau" => self.tau = parse_num(key, value)?,
            "T" => self.t_final = parse_num(key, value)?,
            "rho" => self.rho = parse_num(key, value)?,
            "source" => {
                self.source = match value {
                    "two_patch" => SourceKind::TwoPatch,
                    "zero" => SourceKind::Zero,
                    _ => return Err(Error::Config(format!("`source`: unknown source `{value}`"))),
                }
            }
            "out" => self.out = Some(PathBuf::from(value)),
            "cache" => self.cache = Some(PathBuf::from(value)),
            "snapshots" => {
                self.snapshots = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "sweep" => self.sweep = Some(parse_sweep(value)?),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.t_final > 0.0) {
            return Err(Error::Config("`tau` and `T` must be positive".into()));
        }
        crate::solver::step_count(self.tau, self.t_final).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config("`rho` must be positive".into()));
        }
        if let FieldSpec::Channelized { contrast, .. } = self.field {
            if !(contrast >= 1.0) {
                return Err(Error::Config("`contrast` must be at least 1".into()));
            }
        }
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config("fine grid needs at least 2 cells per axis".into()));
        }
        let coarse: Vec<(usize, usize)> = match &self.sweep {
            Some(Sweep { param: SweepParam::H, values }) => values.iter().map(|&n| (n, n)).collect(),
            _ => vec![(self.coarse_nx, self.coarse_ny)],
        };
        for (cx, cy) in coarse {
            if cx == 0 || cy == 0 || !self.nx.is_multiple_of(cx) || !self.ny.is_multiple_of(cy) {
                return Err(Error::Config(format!(
                    "coarse partition {cx}x{cy} does not divide fine grid {}x{}",
                    self.nx, self.ny
                )));
            }
            let cells = (self.nx / cx) * (self.ny / cy);
            let lzs: Vec<usize> = match &self.sweep {
                Some(Sweep { param: SweepParam::Lz, values }) => values.clone(),
                _ => vec![self.lz],
            };
            for lz in lzs {
                if lz == 0 || lz > cells {
                    return Err(Error::Config(format!("`Lz` = {lz} is out of range 1..={cells}")));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(Error::Config("sweep list is empty".into()));
            }
        }
        Ok(())
    }

    /// `key = value` lines that reproduce this configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        match &self.field {
            FieldSpec::Channelized { channels, contrast, seed } => {
                let _ = writeln!(s, "field = channelized\nchannels = {channels}\ncontrast = {contrast:e}\nseed = {seed}");
            }
            FieldSpec::Uniform => s.push_str("field = uniform\n"),
            FieldSpec::Raster(p) => {
                let _ = writeln!(s, "raster = {}", p.display());
            }
        }
        let _ = writeln!(s, "invert = {}", self.invert);
        let _ = writeln!(s, "nx = {}\nny = {}\nNx = {}\nNy = {}", self.nx, self.ny, self.coarse_nx, self.coarse_ny);
        let _ = writeln!(s, "Lz = {}", self.lz);
        match self.layers {
            Layers::Auto => s.push_str("layers = auto\n"),
            Layers::Fixed(l) => {
                let _ = writeln!(s, "layers = {l}");
            }
        }
        let _ = writeln!(s, "tau = {:e}\nT = {}\nrho = {}", self.tau, self.t_final, self.rho);
        let _ = writeln!(
            s,
            "source = {}",
            match self.source {
                SourceKind::TwoPatch => "two_patch",
                SourceKind::Zero => "zero",
            }
        );
        if let Some(sw) = &self.sweep {
            let vals: Vec<String> = sw.values.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "sweep = {}:{}", sw.param.name(), vals.join(","));
        }
        s
    }
}

fn parse_sweep(value: &str) -> Result<Sweep> {
    let (p, list) = value
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("`sweep`: expected `param:v1,v2,...`, got `{value}`")))?;
    let param = match p.trim() {
        "Lz" => SweepParam::Lz,
        "layers" | "l" | "J" => SweepParam::Layers,
        "H" => SweepParam::H,
        other => return Err(Error::Config(format!("`sweep`: cannot sweep `{other}`"))),
    };
    let values = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| match param {
            SweepParam::H => parse_h(s),
            _ => parse_num("sweep", s.trim()),
        })
        .collect::<Result<Vec<usize>>>()?;
    if values.is_empty() {
        return Err(Error::Config("sweep list is empty".into()));
    }
    Ok(Sweep { param, values })
}

/// `l = max(1, ⌈ln(R_κ / H²)⌉)`, clamped to the saturation layer count.
pub fn auto_layers(contrast: f64, part: &CoarsePartition) -> usize {
    let h = part.h();
    let l = (contrast / (h * h)).ln().ceil();
    let l = if l.is_finite() && l > 1.0 { l as usize } else { 1 };
    l.min(part.saturation_layers().max(1))
}

pub fn build_field(cfg: &ExperimentConfig) -> Result<PermeabilityField> {
    let field = match &cfg.field {
        FieldSpec::Channelized { channels, contrast, seed } => {
            generate_channelized(cfg.nx, cfg.ny, *channels, *contrast, *seed)?
        }
        FieldSpec::Uniform => PermeabilityField::uniform(cfg.nx, cfg.ny, 1.0)?,
        FieldSpec::Raster(p) => {
            let f = load_raster(p)?;
            if f.nx() != cfg.nx || f.ny() != cfg.ny {
                return Err(Error::Config(format!(
                    "raster {} is {}x{}, config says {}x{}",
                    p.display(),
                    f.nx(),
                    f.ny(),
                    cfg.nx,
                    cfg.ny
                )));
            }
            f
        }
    };
    Ok(if cfg.invert { invert_field(&field) } else { field })
}

pub fn build_source(cfg: &ExperimentConfig, fine: &FineGrid) -> Result<SourceSpec> {
    let mut spec = match cfg.source {
        SourceKind::TwoPatch => two_patch_source(cfg.nx, cfg.ny)?,
        SourceKind::Zero => SourceSpec::zero(fine),
    };
    spec.rho = vec![cfg.rho; fine.n_cells()];
    Ok(spec)
}

/// Fine-scale data shared by every point of a sweep.
pub struct Prepared {
    pub fine: FineGrid,
    pub field: PermeabilityField,
    pub spec: SourceSpec,
    pub ops: FineOperators,
    pub reference: Trajectory,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    prepare_with_field(cfg, build_field(cfg)?)
}

/// As [`prepare`], with a caller-supplied field in place of `cfg.field`.
pub fn prepare_with_field(cfg: &ExperimentConfig, field: PermeabilityField) -> Result<Prepared> {
    cfg.validate()?;
    if field.nx() != cfg.nx || field.ny() != cfg.ny {
        return Err(Error::Config(format!(
            "field is {}x{}, config says {}x{}",
            field.nx(),
            field.ny(),
            cfg.nx,
            cfg.ny
        )));
    }
    let fine = FineGrid::new(cfg.nx, cfg.ny)?;
    let spec = build_source(cfg, &fine)?;
    let ops = assemble_global(&fine, &field, &spec.rho)?;
    let reference = solve_fine_reference(&ops, &spec, cfg.tau, cfg.t_final)?;
    Ok(Prepared {
        fine,
        field,
        spec,
        ops,
        reference,
    })
}

/// Outcome of one multiscale run against the fine reference.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub coarse: (usize, usize),
    pub lz: usize,
    pub layers: usize,
    pub lambda: Option<f64>,
    pub null_directions: usize,
    pub errors: ErrorSeries,
}

fn spectra_for(cfg: &ExperimentConfig, prep: &Prepared, part: &CoarsePartition) -> Result<Vec<ElementSpectrum>> {
    let key = format!(
        "{}:{}x{}:{}x{}",
        prep.field.fingerprint(),
        cfg.nx,
        cfg.ny,
        part.nx(),
        part.ny()
    );
    let cache_path = cfg.cache.as_ref().map(|d| {
        let name: String = key.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        d.join(format!("spectra_{name}.bin"))
    });
    if let Some(p) = &cache_path {
        if let Some(s) = load_spectra(p, &key)? {
            return Ok(s);
        }
    }
    let pou = solve_pou(&prep.fine, part, &prep.field)?;
    let kt = compute_kappa_tilde(&prep.field, &pou)?;
    let spectra = solve_all_spectral(part, &prep.field, &kt)?;
    if let (Some(p), Some(dir)) = (&cache_path, &cfg.cache) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_spectra(p, &key, &spectra)?;
    }
    Ok(spectra)
}

/// Runs the multiscale pipeline for one `(N, L_z, l)` on prepared data.
pub fn run_point(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    coarse: (usize, usize),
    lz: usize,
    layers: Layers,
    spectra: Option<Vec<ElementSpectrum>>,
) -> Result<(RunReport, Trajectory)> {
    let part = CoarsePartition::new(&prep.fine, coarse.0, coarse.1)?;
    let spectra = match spectra {
        Some(s) => s,
        None => spectra_for(cfg, prep, &part)?,
    };
    let basis = select_basis(spectra, lz)?;
    let lambda = basis.lambda();
    let l = match layers {
        Layers::Auto => auto_layers(prep.field.contrast(), &part),
        Layers::Fixed(l) => l,
    };
    let cem = build_velocity_space(&part, &prep.field, &basis, l)?;
    let sys = assemble_reduced(&prep.ops, cem, basis)?;
    let ms = backward_euler(&sys, &prep.ops, &prep.spec, cfg.tau, cfg.t_final)?;
    let fine_ms = prolongate(&sys, &ms)?;
    let errors = error_series(&prep.ops, &prep.reference, &fine_ms)?;
    Ok((
        RunReport {
            coarse,
            lz,
            layers: l,
            lambda,
            null_directions: sys.null_directions(),
            errors,
        },
        fine_ms,
    ))
}

fn run_info(cfg: &ExperimentConfig, prep: &Prepared, reports: &[&RunReport]) -> String {
    let mut s = format!("cemgms {VERSION}\n");
    s.push_str(&cfg.echo());
    let _ = writeln!(s, "field_fingerprint = {}", prep.field.fingerprint());
    let _ = writeln!(s, "field_contrast = {:e}", prep.field.contrast());
    if let FieldSpec::Channelized { seed, .. } = cfg.field {
        let _ = writeln!(s, "seed_used = {seed}");
    }
    for r in reports {
        let _ = writeln!(
            s,
            "point Nx={} Ny={} Lz={} layers_used={} lambda={} null_directions={}",
            r.coarse.0,
            r.coarse.1,
            r.lz,
            r.layers,
            r.lambda.map_or("none".to_string(), |l| format!("{l:e}")),
            r.null_directions
        );
    }
    s
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// One full run; writes `errors.csv`, `run.txt` and optional snapshots into
/// `cfg.out` when set.
pub fn run_single(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    run_single_with_field(cfg, build_field(cfg)?)
}

/// As [`run_single`] on a caller-supplied field.
pub fn run_single_with_field(cfg: &ExperimentConfig, field: PermeabilityField) -> Result<RunReport> {
    let prep = prepare_with_field(cfg, field)?;
    let (report, fine_ms) = run_point(cfg, &prep, (cfg.coarse_nx, cfg.coarse_ny), cfg.lz, cfg.layers, None)?;
    if let Some(out) = &cfg.out {
        ensure_dir(out)?;
        write_atomic(&out.join("errors.csv"), report.errors.to_csv().as_bytes())?;
        write_atomic(&out.join("run.txt"), run_info(cfg, &prep, &[&report]).as_bytes())?;
        if !cfg.snapshots.is_empty() {
            prep.reference.write_snapshots(out.join("snapshots_fine.bin"), &cfg.snapshots)?;
            fine_ms.write_snapshots(out.join("snapshots_ms.bin"), &cfg.snapshots)?;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub param: SweepParam,
    pub values: Vec<usize>,
    pub points: Vec<RunReport>,
    /// Observed orders between consecutive points (H sweeps only).
    pub orders: Vec<(Option<f64>, Option<f64>)>,
}

impl SweepReport {
    /// Long format `sweep_value,t,e_v,e_p`.
    pub fn long_csv(&self) -> String {
        let mut s = String::from("sweep_value,t,e_v,e_p\n");
        for (v, r) in self.values.iter().zip(&self.points) {
            let label = sweep_label(self.param, *v);
            for n in 0..r.errors.len() {
                if let (Some(ev), Some(ep)) = (r.errors.e_v[n], r.errors.e_p[n]) {
                    let _ = writeln!(s, "{label},{},{ev:e},{ep:e}", r.errors.times[n]);
                }
            }
        }
        s
    }

    /// `param,value,e_v_T,e_p_T,order_v,order_p`.
    pub fn summary_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        let mut s = String::from("param,value,e_v_T,e_p_T,order_v,order_p\n");
        for (i, (v, r)) in self.values.iter().zip(&self.points).enumerate() {
            let (ev, ep) = r.errors.terminal();
            let (ov, op) = if i == 0 { (None, None) } else { self.orders[i - 1] };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                self.param.name(),
                sweep_label(self.param, *v),
                opt(ev),
                opt(ep),
                opt(ov),
                opt(op)
            );
        }
        s
    }
}

fn sweep_label(param: SweepParam, v: usize) -> String {
    match param {
        SweepParam::H => format!("1/{v}"),
        _ => v.to_string(),
    }
}

/// Observed order `ln(e₁/e₂) / ln(H₁/H₂)`.
pub fn observed_order(e1: Option<f64>, e2: Option<f64>, h1: f64, h2: f64) -> Option<f64> {
    match (e1, e2) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).ln() / (h1 / h2).ln()),
        _ => None,
    }
}

/// Runs every sweep point against one shared fine reference.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("run_sweep needs a `sweep` setting".into()))?;
    let prep = prepare(cfg)?;
    // spectra depend only on the coarse partition
    let mut spectra: BTreeMap<usize, Vec<ElementSpectrum>> = BTreeMap::new();
    if sweep.param != SweepParam::H {
        let part = CoarsePartition::new(&prep.fine, cfg.coarse_nx, cfg.coarse_ny)?;
        spectra.insert(cfg.coarse_nx, spectra_for(cfg, &prep, &part)?);
    }
    let points: Vec<RunReport> = sweep
        .values
        .par_iter()
        .map(|&v| {
            let (coarse, lz, layers) = match sweep.param {
                SweepParam::Lz => ((cfg.coarse_nx, cfg.coarse_ny), v, cfg.layers),
                SweepParam::Layers => ((cfg.coarse_nx, cfg.coarse_ny), cfg.lz, Layers::Fixed(v)),
                SweepParam::H => ((v, v), cfg.lz, cfg.layers),
            };
            let (report, _) = run_point(cfg, &prep, coarse, lz, layers, spectra.get(&coarse.0).cloned())?;
            if let Some(out) = &cfg.out {
                ensure_dir(out)?;
                let name = format!("errors_{}_{}.csv", sweep.param.name(), v);
                write_atomic(&out.join(name), report.errors.to_csv().as_bytes())?;
            }
            Ok(report)
        })
        .collect::<Result<_>>()?;
    let orders = points
        .windows(2)
        .zip(sweep.values.windows(2))
        .map(|(r, v)| {
            if sweep.param != SweepParam::H {
                return (None, None);
            }
            let (h1, h2) = (1.0 / v[0] as f64, 1.0 / v[1] as f64);
            let (ev1, ep1) = r[0].errors.terminal();
            let (ev2, ep2) = r[1].errors.terminal();
            (observed_order(ev1, ev2, h1, h2), observed_order(ep1, ep2, h1, h2))
        })
        .collect();
    let report = SweepReport {
        param: sweep.param,
        values: sweep.values.clone(),
        points,
        orders,
    };
    if let Some(out) = &cfg.out {
        ensure_dir(out)?;
        write_atomic(&out.join("sweep.csv"), report.long_csv().as_bytes())?;
        write_atomic(&out.join("sweep_summary.csv"), report.summary_csv().as_bytes())?;
        let refs: Vec<&RunReport> = report.points.iter().collect();
        write_atomic(&out.join("run.txt"), run_info(cfg, &prep, &refs).as_bytes())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "# demo\nnx = 40\nNx=4 # coarse\ncontrast = 1e3\nlayers = auto\nsweep = H:1/2,1/4\n").unwrap();
        let cfg = ExperimentConfig::from_file(&p).unwrap();
        assert_eq!((cfg.nx, cfg.ny, cfg.coarse_nx), (40, 40, 4));
        assert_eq!(cfg.layers, Layers::Auto);
        assert_eq!(cfg.sweep, Some(Sweep { param: SweepParam::H, values: vec![2, 4] }));
        assert!(matches!(cfg.field, FieldSpec::Channelized { contrast, .. } if contrast == 1e3));
        std::fs::write(&p, "nx 40\n").unwrap();
        assert!(matches!(ExperimentConfig::from_file(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("layers", "3").unwrap();
        cfg.set("sweep", "Lz:1,2").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, cfg.echo()).unwrap();
        assert_eq!(ExperimentConfig::from_file(&p).unwrap(), cfg);
    }

    #[test]
    fn h_values() {
        assert_eq!(parse_h("1/20").unwrap(), 20);
        assert_eq!(parse_h("0.2").unwrap(), 5);
        assert_eq!(parse_h("10").unwrap(), 10);
        assert!(parse_h("0.3").is_err());
    }

    #[test]
    fn validation_rejects_bad_partitions() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("Nx", "3").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.set("tau", "0.3").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn auto_layers_saturate_for_high_contrast() {
        let fine = FineGrid::new(80, 80).unwrap();
        let part = CoarsePartition::new(&fine, 10, 10).unwrap();
        assert_eq!(auto_layers(1e4, &part), 9);
        assert_eq!(auto_layers(1.0, &CoarsePartition::new(&fine, 2, 2).unwrap()), 1);
        let part = CoarsePartition::new(&fine, 4, 4).unwrap();
        // ln(16) = 2.77
        assert_eq!(auto_layers(1.0, &part), 3);
    }

    #[test]
    fn small_run_is_deterministic() {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [("nx", "16"), ("Nx", "4"), ("tau", "0.1"), ("T", "0.5"), ("layers", "1")] {
            cfg.set(k, v).unwrap();
        }
        let a = run_single(&cfg).unwrap();
        let b = run_single(&cfg).unwrap();
        assert_eq!(a.errors.to_csv(), b.errors.to_csv());
        assert_eq!(a.layers, 1);
    }
}
