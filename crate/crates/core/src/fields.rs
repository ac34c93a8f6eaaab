//! Permeability fields and source/initial data.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::FineGrid;

/// Cellwise-constant positive coefficient `κ` on a fine grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PermeabilityField {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
    min: f64,
    max: f64,
}

impl PermeabilityField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        Error::check_len("permeability field", nx * ny, values.len())?;
        let mut min = f64::INFINITY;
        let mut max = 0.0f64;
        for (c, &v) in values.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "permeability must be positive and finite, cell {c} has {v}"
                )));
            }
            min = min.min(v);
            max = max.max(v);
        }
        Ok(Self {
            nx,
            ny,
            values,
            min,
            max,
        })
    }

    pub fn uniform(nx: usize, ny: usize, value: f64) -> Result<Self> {
        Self::new(nx, ny, vec![value; nx * ny])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, c: usize) -> f64 {
        self.values[c]
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// `R_κ = κ_max / κ_min`.
    pub fn contrast(&self) -> f64 {
        self.max / self.min
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.nx, self.ny, self.values.iter().map(|v| v * s).collect())
    }

    pub fn matches(&self, grid: &FineGrid) -> Result<()> {
        if self.nx != grid.nx() || self.ny != grid.ny() {
            return Err(Error::Config(format!(
                "field is {}x{} but the fine grid is {}x{}",
                self.nx,
                self.ny,
                grid.nx(),
                grid.ny()
            )));
        }
        Ok(())
    }

    /// Stable content hash (hex SHA-256 over dimensions and value bits).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.nx as u64).to_le_bytes());
        h.update((self.ny as u64).to_le_bytes());
        for v in &self.values {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Writes the field in the raster format read by [`load_raster`].
    pub fn write_raster(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("{} {}\n", self.nx, self.ny);
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// `R_κ` of a field.
pub fn contrast(field: &PermeabilityField) -> f64 {
    field.contrast()
}

/// Channelized high-contrast medium: background 1 with `n_channels` thin
/// horizontal or vertical strips (and an occasional block inclusion) set to
/// `contrast`.
///
/// Geometry is drawn in unit coordinates and rasterized by cell centers, so
/// one seed describes the same medium at every resolution. Strips are at least
/// one cell thick.
pub fn generate_channelized(
    nx: usize,
    ny: usize,
    n_channels: usize,
    contrast: f64,
    seed: u64,
) -> Result<PermeabilityField> {
    if !(contrast >= 1.0 && contrast.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "contrast must be a finite value >= 1, got {contrast}"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("field needs at least one cell".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hx, hy) = (1.0 / nx as f64, 1.0 / ny as f64);
    // [x0, x1) × [y0, y1) in unit coordinates
    let mut rects: Vec<[f64; 4]> = Vec::new();
    for k in 0..n_channels {
        let horizontal = rng.random_bool(0.5);
        let length = rng.random_range(0.55..0.9f64);
        let start = rng.random_range(0.0..1.0 - length);
        let width = rng.random_range(0.015..0.035f64);
        if horizontal {
            let w = width.max(1.01 * hy);
            let y = rng.random_range(0.05..0.95 - w);
            rects.push([start, start + length, y, y + w]);
        } else {
            let w = width.max(1.01 * hx);
            let x = rng.random_range(0.05..0.95 - w);
            rects.push([x, x + w, start, start + length]);
        }
        if k % 3 == 2 {
            let sx = rng.random_range(0.03..0.08f64).max(1.01 * hx);
            let sy = rng.random_range(0.03..0.08f64).max(1.01 * hy);
            let x = rng.random_range(0.05..0.95 - sx);
            let y = rng.random_range(0.05..0.95 - sy);
            rects.push([x, x + sx, y, y + sy]);
        }
    }
    let mut values = vec![1.0; nx * ny];
    for iy in 0..ny {
        let yc = (iy as f64 + 0.5) * hy;
        for ix in 0..nx {
            let xc = (ix as f64 + 0.5) * hx;
            if rects
                .iter()
                .any(|r| xc >= r[0] && xc < r[1] && yc >= r[2] && yc < r[3])
            {
                values[iy * nx + ix] = contrast;
            }
        }
    }
    PermeabilityField::new(nx, ny, values)
}

/// Cellwise reciprocal `1/κ`.
pub fn invert_field(field: &PermeabilityField) -> PermeabilityField {
    let values: Vec<f64> = field.values.iter().map(|v| 1.0 / v).collect();
    PermeabilityField::new(field.nx, field.ny, values)
        .expect("reciprocal of a positive finite field is positive and finite")
}

/// Reads a whitespace-separated raster: `nx ny` on the first line, then
/// `nx*ny` positive reals in row-major order.
pub fn load_raster(path: impl AsRef<Path>) -> Result<PermeabilityField> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_raster(&text, path)
}

fn parse_raster(text: &str, path: &Path) -> Result<PermeabilityField> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| err(1, "empty raster file".into()))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(err(hline + 1, format!("expected header \"nx ny\", got {header:?}")));
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| err(hline + 1, format!("invalid dimension {s:?}")))
    };
    let (nx, ny) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
    let mut values = Vec::with_capacity(nx * ny);
    for (i, line) in lines {
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(i + 1, format!("not a number: {tok:?}")))?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(err(i + 1, format!("permeability must be positive, got {tok}")));
            }
            values.push(v);
        }
    }
    if values.len() != nx * ny {
        return Err(err(
            text.lines().count(),
            format!("expected {} values for a {nx}x{ny} raster, found {}", nx * ny, values.len()),
        ));
    }
    PermeabilityField::new(nx, ny, values)
}

/// Time dependence of the source `f`, stored as cell averages.
#[derive(Clone, Debug)]
pub enum SourceTerm {
    Zero,
    Steady(Vec<f64>),
    /// `f(x, t) = temporal(t) · profile(x)`.
    Separable {
        profile: Vec<f64>,
        temporal: fn(f64) -> f64,
    },
}

/// Source, density and initial data for one run.
#[derive(Clone, Debug)]
pub struct SourceSpec {
    pub source: SourceTerm,
    /// Density `ρ` per cell.
    pub rho: Vec<f64>,
    /// Initial pressure `h_p`, cellwise.
    pub initial_pressure: Vec<f64>,
    /// Initial velocity `h_v`, one value per velocity DOF.
    pub initial_velocity: Vec<f64>,
}

impl SourceSpec {
    /// `f ≡ 0`, `ρ ≡ 1` and zero initial data.
    pub fn zero(grid: &FineGrid) -> Self {
        Self {
            source: SourceTerm::Zero,
            rho: vec![1.0; grid.n_cells()],
            initial_pressure: vec![0.0; grid.n_cells()],
            initial_velocity: vec![0.0; grid.n_edges()],
        }
    }

    /// Cell averages of `f(·, t)`.
    pub fn source_at(&self, t: f64) -> Vec<f64> {
        match &self.source {
            SourceTerm::Zero => vec![0.0; self.rho.len()],
            SourceTerm::Steady(f) => f.clone(),
            SourceTerm::Separable { profile, temporal } => {
                let s = temporal(t);
                profile.iter().map(|v| v * s).collect()
            }
        }
    }

    pub fn is_zero_source(&self) -> bool {
        match &self.source {
            SourceTerm::Zero => true,
            SourceTerm::Steady(f) => f.iter().all(|&v| v == 0.0),
            SourceTerm::Separable { profile, .. } => profile.iter().all(|&v| v == 0.0),
        }
    }

    pub fn validate(&self, grid: &FineGrid) -> Result<()> {
        let n = grid.n_cells();
        Error::check_len("density", n, self.rho.len())?;
        Error::check_len("initial pressure", n, self.initial_pressure.len())?;
        Error::check_len("initial velocity", grid.n_edges(), self.initial_velocity.len())?;
        match &self.source {
            SourceTerm::Zero => {}
            SourceTerm::Steady(f) | SourceTerm::Separable { profile: f, .. } => {
                Error::check_len("source", n, f.len())?
            }
        }
        if let Some((c, r)) = self
            .rho
            .iter()
            .enumerate()
            .find(|(_, r)| !(**r > 0.0 && r.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "density must be positive, cell {c} has {r}"
            )));
        }
        Ok(())
    }
}

/// Two-patch source on the unit square: `f = 1` on `[0,0.1]²`, `f = −1` on
/// `[0.9,1]²`, zero elsewhere (membership by cell center), zero initial data
/// and `ρ ≡ 1`.
pub fn two_patch_source(nx: usize, ny: usize) -> Result<SourceSpec> {
    let grid = FineGrid::new(nx, ny)?;
    let mut f = vec![0.0; grid.n_cells()];
    for (c, v) in f.iter_mut().enumerate() {
        let (x, y) = grid.cell_center(c);
        if x <= 0.1 && y <= 0.1 {
            *v = 1.0;
        } else if x >= 0.9 && y >= 0.9 {
            *v = -1.0;
        }
    }
    Ok(SourceSpec {
        source: SourceTerm::Steady(f),
        ..SourceSpec::zero(&grid)
    })
}
