//! Fine rectangular mesh, conforming coarse partition and subdomains.
//!
//! Numbering is row-major everywhere:
//! - cell `(ix, iy)` has index `iy * nx + ix`;
//! - velocity DOFs are the interior edges only (the `v·n = 0` boundary edges
//!   are not part of the space). The `(nx-1)*ny` x-normal edges come first,
//!   edge `(ix, iy)` separating cells `(ix, iy)` and `(ix+1, iy)`; the
//!   `nx*(ny-1)` y-normal edges follow, edge `(ix, iy)` separating cells
//!   `(ix, iy)` and `(ix, iy+1)`;
//! - fine nodes `(ix, iy)` with `0 <= ix <= nx` have index `iy * (nx+1) + ix`.
//!
//! Edge normals point in `+x` / `+y`, so every edge has a "minus" cell (left
//! or below) and a "plus" cell (right or above).

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
}

/// Faces of one fine cell, `None` where the face lies on `∂Ω`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellFaces {
    pub west: Option<usize>,
    pub east: Option<usize>,
    pub south: Option<usize>,
    pub north: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineGrid {
    nx: usize,
    ny: usize,
    origin: (f64, f64),
    extent: (f64, f64),
}

impl FineGrid {
    /// Uniform `nx × ny` grid on the unit square.
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        Self::with_domain(nx, ny, (0.0, 0.0), (1.0, 1.0))
    }

    pub fn with_domain(nx: usize, ny: usize, origin: (f64, f64), extent: (f64, f64)) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!(
                "fine grid needs at least 2 cells per axis, got {nx}x{ny}"
            )));
        }
        if !(extent.0 > 0.0 && extent.1 > 0.0 && extent.0.is_finite() && extent.1.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "domain extent must be positive, got {extent:?}"
            )));
        }
        Ok(Self {
            nx,
            ny,
            origin,
            extent,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn extent(&self) -> (f64, f64) {
        self.extent
    }

    pub fn hx(&self) -> f64 {
        self.extent.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.extent.1 / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_x_edges(&self) -> usize {
        (self.nx - 1) * self.ny
    }

    pub fn n_y_edges(&self) -> usize {
        self.nx * (self.ny - 1)
    }

    /// Number of velocity DOFs, i.e. interior edges.
    pub fn n_edges(&self) -> usize {
        self.n_x_edges() + self.n_y_edges()
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    #[inline]
    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn cell_center(&self, c: usize) -> (f64, f64) {
        let (ix, iy) = self.cell_ij(c);
        (
            self.origin.0 + (ix as f64 + 0.5) * self.hx(),
            self.origin.1 + (iy as f64 + 0.5) * self.hy(),
        )
    }

    /// Lower-left and upper-right corners of a cell.
    pub fn cell_bounds(&self, c: usize) -> ((f64, f64), (f64, f64)) {
        let (ix, iy) = self.cell_ij(c);
        let x0 = self.origin.0 + ix as f64 * self.hx();
        let y0 = self.origin.1 + iy as f64 * self.hy();
        ((x0, y0), (x0 + self.hx(), y0 + self.hy()))
    }

    /// Edge between cells `(ix, iy)` and `(ix + 1, iy)`.
    #[inline]
    pub fn x_edge(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix + 1 < self.nx && iy < self.ny);
        iy * (self.nx - 1) + ix
    }

    /// Edge between cells `(ix, iy)` and `(ix, iy + 1)`.
    #[inline]
    pub fn y_edge(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy + 1 < self.ny);
        self.n_x_edges() + iy * self.nx + ix
    }

    pub fn edge_axis(&self, e: usize) -> Axis {
        if e < self.n_x_edges() {
            Axis::X
        } else {
            Axis::Y
        }
    }

    /// `(minus, plus)` cells of an edge with respect to its `+x`/`+y` normal.
    pub fn edge_cells(&self, e: usize) -> (usize, usize) {
        let nxe = self.n_x_edges();
        if e < nxe {
            let (ix, iy) = (e % (self.nx - 1), e / (self.nx - 1));
            (self.cell(ix, iy), self.cell(ix + 1, iy))
        } else {
            let k = e - nxe;
            let (ix, iy) = (k % self.nx, k / self.nx);
            (self.cell(ix, iy), self.cell(ix, iy + 1))
        }
    }

    /// Length of the edge itself (the face the flux crosses).
    pub fn edge_length(&self, e: usize) -> f64 {
        match self.edge_axis(e) {
            Axis::X => self.hy(),
            Axis::Y => self.hx(),
        }
    }

    pub fn cell_faces(&self, c: usize) -> CellFaces {
        let (ix, iy) = self.cell_ij(c);
        CellFaces {
            west: (ix > 0).then(|| self.x_edge(ix - 1, iy)),
            east: (ix + 1 < self.nx).then(|| self.x_edge(ix, iy)),
            south: (iy > 0).then(|| self.y_edge(ix, iy - 1)),
            north: (iy + 1 < self.ny).then(|| self.y_edge(ix, iy)),
        }
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    pub fn node_coords(&self, n: usize) -> (f64, f64) {
        let (ix, iy) = (n % (self.nx + 1), n / (self.nx + 1));
        (
            self.origin.0 + ix as f64 * self.hx(),
            self.origin.1 + iy as f64 * self.hy(),
        )
    }
}

/// Builds a unit-square fine grid.
pub fn build_fine_grid(nx: usize, ny: usize) -> Result<FineGrid> {
    FineGrid::new(nx, ny)
}

/// An interior coarse edge `E_i` together with its two adjacent elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoarseEdge {
    pub axis: Axis,
    /// `(minus, plus)` elements, as for fine edges.
    pub elements: (usize, usize),
}

/// Coarse feature whose neighborhood `ω` is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Feature {
    Node(usize),
    Edge(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoarsePartition {
    fine: FineGrid,
    nx: usize,
    ny: usize,
    mx: usize,
    my: usize,
    interior_edges: Vec<CoarseEdge>,
}

impl CoarsePartition {
    pub fn new(fine: &FineGrid, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || !fine.nx().is_multiple_of(nx) || !fine.ny().is_multiple_of(ny) {
            return Err(Error::Config(format!(
                "coarse partition {nx}x{ny} does not divide fine grid {}x{}",
                fine.nx(),
                fine.ny()
            )));
        }
        let mut interior_edges = Vec::with_capacity((nx - 1) * ny + nx * (ny - 1));
        for ky in 0..ny {
            for kx in 0..nx.saturating_sub(1) {
                interior_edges.push(CoarseEdge {
                    axis: Axis::X,
                    elements: (ky * nx + kx, ky * nx + kx + 1),
                });
            }
        }
        for ky in 0..ny.saturating_sub(1) {
            for kx in 0..nx {
                interior_edges.push(CoarseEdge {
                    axis: Axis::Y,
                    elements: (ky * nx + kx, (ky + 1) * nx + kx),
                });
            }
        }
        Ok(Self {
            fine: fine.clone(),
            nx,
            ny,
            mx: fine.nx() / nx,
            my: fine.ny() / ny,
            interior_edges,
        })
    }

    pub fn fine(&self) -> &FineGrid {
        &self.fine
    }

    /// Coarse elements along x.
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Fine cells per coarse element along x and y.
    pub fn cells_per_element(&self) -> (usize, usize) {
        (self.mx, self.my)
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    /// Coarse element size `(Hx, Hy)`.
    pub fn element_size(&self) -> (f64, f64) {
        let (lx, ly) = self.fine.extent();
        (lx / self.nx as f64, ly / self.ny as f64)
    }

    /// Coarse mesh size `H`, stored as the element side length (`1/Nx` on the
    /// unit square with a uniform partition).
    pub fn h(&self) -> f64 {
        let (hx, hy) = self.element_size();
        hx.max(hy)
    }

    /// `max_{x,y ∈ K} |x − y|`, the element diameter.
    pub fn diameter(&self) -> f64 {
        let (hx, hy) = self.element_size();
        hx.hypot(hy)
    }

    #[inline]
    pub fn element(&self, kx: usize, ky: usize) -> usize {
        ky * self.nx + kx
    }

    #[inline]
    pub fn element_ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    pub fn element_of_cell(&self, c: usize) -> usize {
        let (ix, iy) = self.fine.cell_ij(c);
        self.element(ix / self.mx, iy / self.my)
    }

    /// Fine cells `I_k` of element `k`, row-major.
    pub fn element_cells(&self, k: usize) -> Vec<usize> {
        let (kx, ky) = self.element_ij(k);
        let mut cells = Vec::with_capacity(self.mx * self.my);
        for iy in ky * self.my..(ky + 1) * self.my {
            for ix in kx * self.mx..(kx + 1) * self.mx {
                cells.push(self.fine.cell(ix, iy));
            }
        }
        cells
    }

    pub fn interior_edges(&self) -> &[CoarseEdge] {
        &self.interior_edges
    }

    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_interior_nodes(&self) -> usize {
        (self.nx - 1) * (self.ny - 1)
    }

    #[inline]
    pub fn node(&self, a: usize, b: usize) -> usize {
        b * (self.nx + 1) + a
    }

    #[inline]
    pub fn node_ij(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }

    pub fn is_interior_node(&self, n: usize) -> bool {
        let (a, b) = self.node_ij(n);
        a > 0 && b > 0 && a < self.nx && b < self.ny
    }

    /// Elements having coarse node `n` as a corner, ascending.
    pub fn node_elements(&self, n: usize) -> Vec<usize> {
        let (a, b) = self.node_ij(n);
        let mut out = Vec::with_capacity(4);
        for ky in b.saturating_sub(1)..=b.min(self.ny - 1) {
            for kx in a.saturating_sub(1)..=a.min(self.nx - 1) {
                out.push(self.element(kx, ky));
            }
        }
        out
    }

    /// Layer count beyond which every oversampled element is all of `Ω`.
    pub fn saturation_layers(&self) -> usize {
        self.nx.max(self.ny) - 1
    }

    /// `K_{i,l}^+`: element `k` grown by `l` rings of coarse elements,
    /// clipped to the domain.
    pub fn oversample(&self, k: usize, layers: usize) -> Subdomain {
        let (kx, ky) = self.element_ij(k);
        let window = ElementWindow {
            kx0: kx.saturating_sub(layers),
            kx1: (kx + layers + 1).min(self.nx),
            ky0: ky.saturating_sub(layers),
            ky1: (ky + layers + 1).min(self.ny),
        };
        Subdomain::from_window(self, window)
    }

    /// The coarse neighborhood `ω` of a node (up to four elements) or of an
    /// interior edge (exactly two).
    pub fn neighborhood(&self, feature: Feature) -> Result<Subdomain> {
        match feature {
            Feature::Node(n) => {
                if n >= self.n_nodes() {
                    return Err(Error::InvalidArgument(format!(
                        "coarse node {n} out of range ({} nodes)",
                        self.n_nodes()
                    )));
                }
                let (a, b) = self.node_ij(n);
                let window = ElementWindow {
                    kx0: a.saturating_sub(1),
                    kx1: (a + 1).min(self.nx),
                    ky0: b.saturating_sub(1),
                    ky1: (b + 1).min(self.ny),
                };
                Ok(Subdomain::from_window(self, window))
            }
            Feature::Edge(e) => {
                let edge = self.interior_edges.get(e).ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "coarse edge {e} out of range ({} interior edges)",
                        self.interior_edges.len()
                    ))
                })?;
                let (kx0, ky0) = self.element_ij(edge.elements.0);
                let (kx1, ky1) = self.element_ij(edge.elements.1);
                Ok(Subdomain::from_window(
                    self,
                    ElementWindow {
                        kx0,
                        kx1: kx1 + 1,
                        ky0,
                        ky1: ky1 + 1,
                    },
                ))
            }
        }
    }

    pub fn whole(&self) -> Subdomain {
        Subdomain::from_window(
            self,
            ElementWindow {
                kx0: 0,
                kx1: self.nx,
                ky0: 0,
                ky1: self.ny,
            },
        )
    }
}

/// Builds the coarse partition `T_H` over `fine`.
pub fn build_coarse_partition(fine: &FineGrid, nx: usize, ny: usize) -> Result<CoarsePartition> {
    CoarsePartition::new(fine, nx, ny)
}

/// Half-open rectangle `[kx0, kx1) × [ky0, ky1)` of coarse elements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementWindow {
    pub kx0: usize,
    pub kx1: usize,
    pub ky0: usize,
    pub ky1: usize,
}

impl ElementWindow {
    pub fn contains(&self, kx: usize, ky: usize) -> bool {
        (self.kx0..self.kx1).contains(&kx) && (self.ky0..self.ky1).contains(&ky)
    }

    pub fn overlaps(&self, other: &ElementWindow) -> bool {
        self.kx0 < other.kx1 && other.kx0 < self.kx1 && self.ky0 < other.ky1 && other.ky0 < self.ky1
    }
}

/// A set of fine cells together with its local DOF lists.
///
/// `velocity_dofs` holds exactly the edges whose two cells both lie in the
/// set, so functions in the local velocity space have zero normal trace on the
/// subdomain boundary by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Subdomain {
    cells: Vec<usize>,
    velocity_dofs: Vec<usize>,
    elements: Vec<usize>,
    window: Option<ElementWindow>,
}

impl Subdomain {
    /// Subdomain made of arbitrary fine cells; duplicates are removed.
    pub fn from_cells(fine: &FineGrid, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut cells: Vec<usize> = cells.into_iter().collect();
        cells.sort_unstable();
        cells.dedup();
        if let Some(&c) = cells.last() {
            if c >= fine.n_cells() {
                return Err(Error::InvalidArgument(format!(
                    "cell {c} out of range ({} cells)",
                    fine.n_cells()
                )));
            }
        }
        let velocity_dofs = interior_edges_of(fine, &cells);
        Ok(Self {
            cells,
            velocity_dofs,
            elements: Vec::new(),
            window: None,
        })
    }

    /// All of `Ω` on a fine grid, without coarse metadata.
    pub fn whole_grid(fine: &FineGrid) -> Self {
        Self {
            cells: (0..fine.n_cells()).collect(),
            velocity_dofs: (0..fine.n_edges()).collect(),
            elements: Vec::new(),
            window: None,
        }
    }

    pub fn from_window(part: &CoarsePartition, window: ElementWindow) -> Self {
        let fine = part.fine();
        let (mx, my) = part.cells_per_element();
        let mut cells = Vec::with_capacity((window.kx1 - window.kx0) * mx * (window.ky1 - window.ky0) * my);
        for iy in window.ky0 * my..window.ky1 * my {
            for ix in window.kx0 * mx..window.kx1 * mx {
                cells.push(fine.cell(ix, iy));
            }
        }
        let mut elements = Vec::new();
        for ky in window.ky0..window.ky1 {
            for kx in window.kx0..window.kx1 {
                elements.push(part.element(kx, ky));
            }
        }
        let velocity_dofs = interior_edges_of(fine, &cells);
        Self {
            cells,
            velocity_dofs,
            elements,
            window: Some(window),
        }
    }

    /// Fine cells, ascending.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Global velocity DOFs interior to the subdomain, ascending.
    pub fn velocity_dofs(&self) -> &[usize] {
        &self.velocity_dofs
    }

    /// Coarse elements covered, ascending (empty for cell-level subdomains).
    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn window(&self) -> Option<ElementWindow> {
        self.window
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_velocity(&self) -> usize {
        self.velocity_dofs.len()
    }

    pub fn local_cell(&self, c: usize) -> Option<usize> {
        self.cells.binary_search(&c).ok()
    }

    pub fn local_edge(&self, e: usize) -> Option<usize> {
        self.velocity_dofs.binary_search(&e).ok()
    }

    pub fn contains_cell(&self, c: usize) -> bool {
        self.local_cell(c).is_some()
    }

    pub fn is_subset_of(&self, other: &Subdomain) -> bool {
        self.cells.iter().all(|&c| other.contains_cell(c))
    }
}

fn interior_edges_of(fine: &FineGrid, sorted_cells: &[usize]) -> Vec<usize> {
    let inside = |c: usize| sorted_cells.binary_search(&c).is_ok();
    let mut edges = Vec::new();
    for &c in sorted_cells {
        let faces = fine.cell_faces(c);
        if let Some(e) = faces.east {
            if inside(fine.edge_cells(e).1) {
                edges.push(e);
            }
        }
        if let Some(e) = faces.north {
            if inside(fine.edge_cells(e).1) {
                edges.push(e);
            }
        }
    }
    edges.sort_unstable();
    edges
}
