//! Two-dimensional local problems on dual cells.
//!
//! A dual cell spans node line to node line (truncated at the domain
//! boundary). Cells on its node lines are Dirichlet data supplied by the
//! edge solutions; everything else in the rectangle is an unknown of a
//! small TPFA system. Sides that fall on the physical boundary are no-flow,
//! so boundary cells there are ordinary unknowns and local solutions can
//! capture near-boundary behavior such as corner wells.

use crate::dense::{refined_solve, LuFactor};
use crate::error::{CoreError, Result};
use crate::fvm::{trans_x, trans_y};
use crate::grid::{CellRect, CoarseLayout, PermField};

pub struct DualCell {
    pub rect: CellRect,
    /// Fine index of each unknown, row-major over the non-Dirichlet cells.
    pub cells: Vec<usize>,
    /// `(local unknown, Dirichlet fine cell, transmissibility)` couplings.
    couplings: Vec<(usize, usize, f64)>,
    a: Vec<f64>,
    lu: LuFactor,
}

impl DualCell {
    pub fn build(di: usize, dj: usize, perm: &PermField, layout: &CoarseLayout) -> Result<Self> {
        let grid = &layout.grid;
        let rect = layout.dual_rect(di, dj);
        let on_node_line = |i: usize, j: usize| {
            layout.node_xs.binary_search(&i).is_ok() || layout.node_ys.binary_search(&j).is_ok()
        };
        let mut cells = Vec::new();
        let mut local = vec![usize::MAX; rect.len()];
        for (i, j) in rect.cells() {
            if !on_node_line(i, j) {
                local[rect.offset(i, j)] = cells.len();
                cells.push(grid.idx(i, j));
            }
        }
        let n = cells.len();
        if n == 0 {
            return Err(CoreError::Config(format!(
                "dual cell ({di}, {dj}) has no interior cells"
            )));
        }
        let mut a = vec![0.0; n * n];
        let mut couplings = Vec::new();
        for (i, j) in rect.cells() {
            if on_node_line(i, j) {
                continue;
            }
            let r = local[rect.offset(i, j)];
            let mut neighbor = |ni: usize, nj: usize, t: f64| {
                debug_assert!(rect.contains(ni, nj), "dual neighbor left the rectangle");
                a[r * n + r] += t;
                if on_node_line(ni, nj) {
                    couplings.push((r, grid.idx(ni, nj), t));
                } else {
                    a[r * n + local[rect.offset(ni, nj)]] = -t;
                }
            };
            if i > 0 {
                neighbor(i - 1, j, trans_x(perm, grid, i - 1, j));
            }
            if i + 1 < grid.nx {
                neighbor(i + 1, j, trans_x(perm, grid, i, j));
            }
            if j > 0 {
                neighbor(i, j - 1, trans_y(perm, grid, i, j - 1));
            }
            if j + 1 < grid.ny {
                neighbor(i, j + 1, trans_y(perm, grid, i, j));
            }
        }
        let lu = LuFactor::new(&a, n)?;
        Ok(DualCell { rect, cells, couplings, a, lu })
    }

    /// Solves the local problem for Dirichlet data `trace` (fine cell ->
    /// value on the node lines) and optional per-cell forcing; returns one
    /// value per unknown in `cells` order.
    pub fn solve(&self, trace: impl Fn(usize) -> f64, forcing: Option<&[f64]>) -> Vec<f64> {
        let n = self.cells.len();
        let mut rhs = vec![0.0; n];
        for &(r, cell, t) in &self.couplings {
            rhs[r] += t * trace(cell);
        }
        if let Some(f) = forcing {
            for (r, &cell) in self.cells.iter().enumerate() {
                rhs[r] += f[cell];
            }
        }
        refined_solve(&self.lu, &self.a, &rhs)
    }
}
