//! Structured 2D grids: the fine cell-centered mesh plus the coarse
//! primal/dual overlay used by the multiscale solver.
//!
//! Cells are indexed `(i, j)` with `i` along x; flattened index is
//! `j * nx + i` (row-major, x fastest). The same ordering is used for every
//! field, patch and basis window in the crate.

use crate::error::{CoreError, Result};

/// Uniform rectangular grid of `nx * ny` cells covering `lx * ly`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineGrid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl FineGrid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(CoreError::Config(format!(
                "grid must have at least one cell per axis, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(CoreError::Config(format!(
                "grid extents must be positive, got {lx}x{ly}"
            )));
        }
        Ok(FineGrid { nx, ny, lx, ly })
    }

    /// Unit square convenience constructor.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        FineGrid::new(nx, ny, 1.0, 1.0)
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    /// Cell area (unit thickness assumed).
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    /// Cell containing the physical point, clamped to the domain.
    pub fn cell_containing(&self, x: f64, y: f64) -> (usize, usize) {
        let i = ((x / self.hx()).floor() as isize).clamp(0, self.nx as isize - 1) as usize;
        let j = ((y / self.hy()).floor() as isize).clamp(0, self.ny as isize - 1) as usize;
        (i, j)
    }
}

/// Position of a coarse node relative to the domain boundary. A node is
/// `Interior` when its support region does not touch the boundary; `Vertex`
/// nodes sit at the corners of the coarse node lattice, `Edge` nodes on its
/// outer ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Edge,
    Vertex,
}

/// Coarse primal/dual overlay on a [`FineGrid`].
///
/// Each primal cell is an `nfx * nfy` block of fine cells whose center cell
/// is the coarse node. Dual cells are the rectangles spanned by
/// neighbouring nodes (truncated at the domain boundary), so adjacent dual
/// cells share the line of cells through their common nodes.
#[derive(Debug, Clone)]
pub struct CoarseLayout {
    pub grid: FineGrid,
    pub ncx: usize,
    pub ncy: usize,
    /// Fine cells per primal cell along each axis (odd by construction).
    pub nfx: usize,
    pub nfy: usize,
    /// Fine i-coordinates of the node columns, length `ncx`.
    pub node_xs: Vec<usize>,
    /// Fine j-coordinates of the node rows, length `ncy`.
    pub node_ys: Vec<usize>,
}

fn node_coords(n_coarse: usize, nf: usize) -> Vec<usize> {
    (0..n_coarse).map(|c| c * nf + (nf - 1) / 2).collect()
}

/// Builds the coarse overlay; `nx/ncx` and `ny/ncy` must divide exactly and
/// the quotients must be odd so every primal cell has a center fine cell.
pub fn build_coarse_layout(grid: FineGrid, ncx: usize, ncy: usize) -> Result<CoarseLayout> {
    for (axis, n, nc) in [("x", grid.nx, ncx), ("y", grid.ny, ncy)] {
        if nc == 0 {
            return Err(CoreError::Config(format!(
                "coarse cell count along {axis} must be positive"
            )));
        }
        if n % nc != 0 {
            return Err(CoreError::Config(format!(
                "fine cells per coarse cell along {axis}: {n} is not divisible by {nc}"
            )));
        }
        if (n / nc) % 2 == 0 {
            return Err(CoreError::Config(format!(
                "fine cells per coarse cell along {axis} must be odd, got {}",
                n / nc
            )));
        }
    }
    let nfx = grid.nx / ncx;
    let nfy = grid.ny / ncy;
    Ok(CoarseLayout {
        grid,
        ncx,
        ncy,
        nfx,
        nfy,
        node_xs: node_coords(ncx, nfx),
        node_ys: node_coords(ncy, nfy),
    })
}

/// Inclusive fine-cell range, used for primal cells, dual cells and support
/// windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl CellRect {
    #[inline]
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false // ranges are inclusive and validated on construction
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.x0 && i <= self.x1 && j >= self.y0 && j <= self.y1
    }

    /// Flattened offset of fine cell `(i, j)` inside this rectangle
    /// (row-major, x fastest).
    #[inline]
    pub fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(self.contains(i, j));
        (j - self.y0) * self.width() + (i - self.x0)
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (x0, x1, y0) = (self.x0, self.x1, self.y0);
        (y0..=self.y1).flat_map(move |j| (x0..=x1).map(move |i| (i, j)))
    }
}

impl CoarseLayout {
    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.ncx * self.ncy
    }

    #[inline]
    pub fn node_id(&self, ci: usize, cj: usize) -> usize {
        debug_assert!(ci < self.ncx && cj < self.ncy);
        cj * self.ncx + ci
    }

    #[inline]
    pub fn node_coarse(&self, node: usize) -> (usize, usize) {
        (node % self.ncx, node / self.ncx)
    }

    /// Fine cell holding coarse node `(ci, cj)`.
    pub fn node_cell(&self, ci: usize, cj: usize) -> (usize, usize) {
        (self.node_xs[ci], self.node_ys[cj])
    }

    /// Primal cell `(ci, cj)` as a fine-cell rectangle.
    pub fn primal_rect(&self, ci: usize, cj: usize) -> CellRect {
        CellRect {
            x0: ci * self.nfx,
            x1: (ci + 1) * self.nfx - 1,
            y0: cj * self.nfy,
            y1: (cj + 1) * self.nfy - 1,
        }
    }

    /// Number of dual cells per axis; boundary-truncated dual cells included.
    #[inline]
    pub fn n_dual(&self) -> (usize, usize) {
        (self.ncx + 1, self.ncy + 1)
    }

    /// Dual cell `(di, dj)` with `di in 0..=ncx`, `dj in 0..=ncy`. Interior
    /// dual cells span node line to node line inclusive; the outermost are
    /// truncated at the domain boundary.
    pub fn dual_rect(&self, di: usize, dj: usize) -> CellRect {
        debug_assert!(di <= self.ncx && dj <= self.ncy);
        CellRect {
            x0: if di == 0 { 0 } else { self.node_xs[di - 1] },
            x1: if di == self.ncx { self.grid.nx - 1 } else { self.node_xs[di] },
            y0: if dj == 0 { 0 } else { self.node_ys[dj - 1] },
            y1: if dj == self.ncy { self.grid.ny - 1 } else { self.node_ys[dj] },
        }
    }

    /// Coarse nodes sitting on the corners of dual cell `(di, dj)`:
    /// 4 for interior dual cells, 2 on domain edges, 1 in domain corners.
    pub fn dual_corner_nodes(&self, di: usize, dj: usize) -> Vec<usize> {
        let mut nodes = Vec::with_capacity(4);
        for cj in [dj.wrapping_sub(1), dj] {
            if cj >= self.ncy {
                continue;
            }
            for ci in [di.wrapping_sub(1), di] {
                if ci >= self.ncx {
                    continue;
                }
                nodes.push(self.node_id(ci, cj));
            }
        }
        nodes
    }

    pub fn node_class(&self, node: usize) -> NodeClass {
        let (ci, cj) = self.node_coarse(node);
        let bx = ci == 0 || ci == self.ncx - 1;
        let by = cj == 0 || cj == self.ncy - 1;
        match (bx, by) {
            (true, true) => NodeClass::Vertex,
            (false, false) => NodeClass::Interior,
            _ => NodeClass::Edge,
        }
    }

    #[inline]
    pub fn is_interior_node(&self, node: usize) -> bool {
        self.node_class(node) == NodeClass::Interior
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&k| self.is_interior_node(k))
            .collect()
    }

    /// Support region of a node: the union of its adjacent dual cells. For
    /// interior nodes this is the fixed `(2*nfx+1) x (2*nfy+1)` window.
    pub fn support_rect(&self, node: usize) -> CellRect {
        let (ci, cj) = self.node_coarse(node);
        CellRect {
            x0: if ci == 0 { 0 } else { self.node_xs[ci - 1] },
            x1: if ci + 1 == self.ncx { self.grid.nx - 1 } else { self.node_xs[ci + 1] },
            y0: if cj == 0 { 0 } else { self.node_ys[cj - 1] },
            y1: if cj + 1 == self.ncy { self.grid.ny - 1 } else { self.node_ys[cj + 1] },
        }
    }

    /// Side length of the interior-node support window along x and y.
    pub fn window_dims(&self) -> (usize, usize) {
        (2 * self.nfx + 1, 2 * self.nfy + 1)
    }

    /// Primal cell containing a fine cell.
    pub fn primal_of_cell(&self, i: usize, j: usize) -> (usize, usize) {
        (i / self.nfx, j / self.nfy)
    }
}

/// Cellwise permeability field; both K and log K are kept because the
/// sampler produces log-permeability while the solvers consume K.
#[derive(Debug, Clone)]
pub struct PermField {
    pub values: Vec<f64>,
    pub log_values: Vec<f64>,
}

impl PermField {
    pub fn from_log(log_values: Vec<f64>, grid: &FineGrid) -> Result<Self> {
        if log_values.len() != grid.n_cells() {
            return Err(CoreError::Shape(format!(
                "log-permeability length {} does not match grid with {} cells",
                log_values.len(),
                grid.n_cells()
            )));
        }
        if let Some(bad) = log_values.iter().find(|v| !v.is_finite()) {
            return Err(CoreError::Numerical(format!(
                "non-finite log-permeability value {bad}"
            )));
        }
        let values = log_values.iter().map(|&v| v.exp()).collect();
        Ok(PermField { values, log_values })
    }

    pub fn from_values(values: Vec<f64>, grid: &FineGrid) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(CoreError::Shape(format!(
                "permeability length {} does not match grid with {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(CoreError::Numerical(format!(
                "permeability must be positive and finite, got {bad}"
            )));
        }
        let log_values = values.iter().map(|&v| v.ln()).collect();
        Ok(PermField { values, log_values })
    }

    pub fn constant(k: f64, grid: &FineGrid) -> Result<Self> {
        PermField::from_values(vec![k; grid.n_cells()], grid)
    }
}

/// Log-permeability over the support window of an interior node, flattened
/// row-major; this is the predictor's input.
pub fn extract_patch(field: &PermField, layout: &CoarseLayout, node: usize) -> Result<Vec<f64>> {
    if node >= layout.n_nodes() {
        return Err(CoreError::Config(format!(
            "node {node} out of range, layout has {} nodes",
            layout.n_nodes()
        )));
    }
    if !layout.is_interior_node(node) {
        return Err(CoreError::Config(format!(
            "node {node} is not interior; patches are defined on interior nodes only"
        )));
    }
    if field.values.len() != layout.grid.n_cells() {
        return Err(CoreError::Shape(format!(
            "field length {} does not match grid",
            field.values.len()
        )));
    }
    let rect = layout.support_rect(node);
    let grid = &layout.grid;
    let mut patch = Vec::with_capacity(rect.len());
    for (i, j) in rect.cells() {
        patch.push(field.log_values[grid.idx(i, j)]);
    }
    Ok(patch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_layout_counts() {
        let grid = FineGrid::unit(81, 81).unwrap();
        let layout = build_coarse_layout(grid, 9, 9).unwrap();
        assert_eq!(layout.n_nodes(), 81);
        assert_eq!(layout.interior_nodes().len(), 49);
        assert_eq!(layout.n_dual(), (10, 10));
        assert_eq!(layout.window_dims(), (19, 19));
        let k = layout.node_id(3, 4);
        assert_eq!(layout.support_rect(k).len(), 361);
    }

    #[test]
    fn small_layout_nodes_and_interior() {
        let grid = FineGrid::unit(9, 9).unwrap();
        let layout = build_coarse_layout(grid, 3, 3).unwrap();
        assert_eq!(layout.node_xs, vec![1, 4, 7]);
        assert_eq!(layout.node_ys, vec![1, 4, 7]);
        assert_eq!(layout.interior_nodes(), vec![layout.node_id(1, 1)]);

        let grid = FineGrid::unit(15, 15).unwrap();
        let layout = build_coarse_layout(grid, 3, 3).unwrap();
        assert_eq!(layout.n_nodes(), 9);
        assert_eq!(layout.interior_nodes().len(), 1);
    }

    #[test]
    fn rejects_bad_ratios() {
        let grid = FineGrid::unit(80, 81).unwrap();
        // 80 not divisible by 9
        assert!(build_coarse_layout(grid, 9, 9).is_err());
        // even quotient 10
        let grid = FineGrid::unit(80, 81).unwrap();
        let err = build_coarse_layout(grid, 8, 9).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains('x'), "error should name the axis: {msg}");
        // ok case
        let grid = FineGrid::unit(81, 81).unwrap();
        assert!(build_coarse_layout(grid, 9, 9).is_ok());
    }

    #[test]
    fn primal_cells_tile_grid() {
        let grid = FineGrid::unit(27, 15).unwrap();
        let layout = build_coarse_layout(grid, 3, 5).unwrap();
        let mut cover = vec![0u8; grid.n_cells()];
        for cj in 0..layout.ncy {
            for ci in 0..layout.ncx {
                for (i, j) in layout.primal_rect(ci, cj).cells() {
                    cover[grid.idx(i, j)] += 1;
                }
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
        // node of each primal cell is its center fine cell
        let r = layout.primal_rect(1, 2);
        let (ni, nj) = layout.node_cell(1, 2);
        assert_eq!(ni, (r.x0 + r.x1) / 2);
        assert_eq!(nj, (r.y0 + r.y1) / 2);
    }

    #[test]
    fn adjacent_dual_cells_share_one_line() {
        let grid = FineGrid::unit(81, 81).unwrap();
        let layout = build_coarse_layout(grid, 9, 9).unwrap();
        let a = layout.dual_rect(1, 1);
        let b = layout.dual_rect(2, 1);
        assert_eq!(a.x1, b.x0);
        assert_eq!(a.width(), layout.nfx + 1);
        // corner dual cell is truncated to node coordinate + 1 cells
        let c = layout.dual_rect(0, 0);
        assert_eq!(c.width(), layout.node_xs[0] + 1);
        // interior node sits on the corner of exactly 4 dual cells
        let k = layout.node_id(4, 4);
        let (ci, cj) = layout.node_coarse(k);
        let (ni, nj) = layout.node_cell(ci, cj);
        let mut hits = 0;
        for dj in 0..=layout.ncy {
            for di in 0..=layout.ncx {
                let r = layout.dual_rect(di, dj);
                let corner = (r.x0 == ni || r.x1 == ni) && (r.y0 == nj || r.y1 == nj);
                if corner && r.contains(ni, nj) {
                    hits += 1;
                }
            }
        }
        assert_eq!(hits, 4);
    }

    #[test]
    fn dual_corner_nodes_counts() {
        let grid = FineGrid::unit(27, 27).unwrap();
        let layout = build_coarse_layout(grid, 3, 3).unwrap();
        assert_eq!(layout.dual_corner_nodes(0, 0).len(), 1);
        assert_eq!(layout.dual_corner_nodes(1, 0).len(), 2);
        assert_eq!(layout.dual_corner_nodes(1, 1).len(), 4);
        assert_eq!(layout.dual_corner_nodes(3, 3).len(), 1);
    }

    #[test]
    fn node_classes() {
        let grid = FineGrid::unit(27, 27).unwrap();
        let layout = build_coarse_layout(grid, 3, 3).unwrap();
        assert_eq!(layout.node_class(layout.node_id(0, 0)), NodeClass::Vertex);
        assert_eq!(layout.node_class(layout.node_id(1, 0)), NodeClass::Edge);
        assert_eq!(layout.node_class(layout.node_id(1, 1)), NodeClass::Interior);
    }

    #[test]
    fn patch_constant_field() {
        let grid = FineGrid::unit(81, 81).unwrap();
        let layout = build_coarse_layout(grid, 9, 9).unwrap();
        let perm = PermField::constant(std::f64::consts::E, &grid).unwrap();
        let node = layout.node_id(3, 3);
        let patch = extract_patch(&perm, &layout, node).unwrap();
        assert_eq!(patch.len(), 361);
        assert!(patch.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn patch_rejects_non_interior() {
        let grid = FineGrid::unit(81, 81).unwrap();
        let layout = build_coarse_layout(grid, 9, 9).unwrap();
        let perm = PermField::constant(1.0, &grid).unwrap();
        assert!(extract_patch(&perm, &layout, layout.node_id(0, 3)).is_err());
    }

    #[test]
    fn patch_transpose_symmetry() {
        // transposing the field transposes the patch of the transposed node
        let grid = FineGrid::unit(15, 15).unwrap();
        let layout = build_coarse_layout(grid, 3, 3).unwrap();
        let mut log_k = vec![0.0; grid.n_cells()];
        for j in 0..15 {
            for i in 0..15 {
                log_k[grid.idx(i, j)] = (i * 31 + j * 7) as f64 * 0.01;
            }
        }
        let perm = PermField::from_log(log_k.clone(), &grid).unwrap();
        let mut log_k_t = vec![0.0; grid.n_cells()];
        for j in 0..15 {
            for i in 0..15 {
                log_k_t[grid.idx(i, j)] = log_k[grid.idx(j, i)];
            }
        }
        let perm_t = PermField::from_log(log_k_t, &grid).unwrap();
        let node = layout.node_id(1, 1);
        let p = extract_patch(&perm, &layout, node).unwrap();
        let pt = extract_patch(&perm_t, &layout, node).unwrap();
        let (w, h) = layout.window_dims();
        for r in 0..h {
            for c in 0..w {
                assert_eq!(p[r * w + c], pt[c * w + r]);
            }
        }
    }

    #[test]
    fn perm_field_validation() {
        let grid = FineGrid::unit(3, 3).unwrap();
        assert!(PermField::from_values(vec![1.0; 8], &grid).is_err());
        assert!(PermField::from_values(vec![-1.0; 9], &grid).is_err());
        assert!(PermField::from_log(vec![f64::NAN; 9], &grid).is_err());
        let p = PermField::from_log(vec![0.0; 9], &grid).unwrap();
        assert!(p.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn cell_lookup() {
        let grid = FineGrid::unit(81, 81).unwrap();
        assert_eq!(grid.cell_containing(0.25, 0.25), (20, 20));
        assert_eq!(grid.cell_containing(0.5, 0.5), (40, 40));
        assert_eq!(grid.cell_containing(1.5, -0.2), (80, 0));
    }
}
