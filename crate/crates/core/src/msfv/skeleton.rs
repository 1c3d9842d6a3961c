//! One-dimensional reduced problems along the node-line skeleton.
//!
//! Node rows and columns split into edges: spans between two adjacent nodes,
//! plus stubs running from an outermost node into the physical boundary.
//! Each edge solves a tridiagonal flow problem that keeps only the
//! transmissibilities tangential to the line (the classic reduced boundary
//! condition), Dirichlet at node ends and no-flow at boundary ends. Every
//! edge is solved once and shared by the dual cells on both sides.

use crate::error::{CoreError, Result};
use crate::fvm::{trans_x, trans_y, BoundarySpec};
use crate::grid::{CoarseLayout, PermField};

#[derive(Debug, Clone)]
pub struct Edge {
    pub horizontal: bool,
    /// Fine indices of the edge cells from low to high coordinate,
    /// excluding the node cells at either end.
    pub cells: Vec<usize>,
    /// Node id owning each end; `None` ends at the physical boundary.
    pub lo: Option<usize>,
    pub hi: Option<usize>,
    /// Tangential transmissibility to the end node cells (0 when absent)
    /// and between consecutive edge cells.
    t_lo: f64,
    t_hi: f64,
    t_in: Vec<f64>,
}

/// Basis traces and correction values on one edge, indexed like `cells`.
#[derive(Debug, Clone)]
pub struct EdgeSolution {
    /// Trace of the basis of the `lo` node (empty when the end is boundary).
    pub ramp_lo: Vec<f64>,
    pub ramp_hi: Vec<f64>,
    pub correction: Vec<f64>,
}

impl Edge {
    /// Trace value of node `k`'s basis at position `pos` along this edge.
    pub fn ramp_for(&self, sol: &EdgeSolution, k: usize, pos: usize) -> f64 {
        if self.lo == Some(k) {
            sol.ramp_lo[pos]
        } else if self.hi == Some(k) {
            sol.ramp_hi[pos]
        } else {
            0.0
        }
    }
}

/// Splits one node line into segments. `nodes` are the node positions along
/// the line, `len` the number of fine cells; returns `(start, end, lo, hi)`
/// spans with inclusive cell ranges and node-slot indices at the ends.
fn segments(nodes: &[usize], len: usize) -> Vec<(usize, usize, Option<usize>, Option<usize>)> {
    let mut segs = Vec::with_capacity(nodes.len() + 1);
    if nodes[0] > 0 {
        segs.push((0, nodes[0] - 1, None, Some(0)));
    }
    for w in 0..nodes.len() - 1 {
        segs.push((nodes[w] + 1, nodes[w + 1] - 1, Some(w), Some(w + 1)));
    }
    if *nodes.last().unwrap() + 1 < len {
        segs.push((nodes.last().unwrap() + 1, len - 1, Some(nodes.len() - 1), None));
    }
    segs
}

pub fn build_edges(perm: &PermField, layout: &CoarseLayout) -> Vec<Edge> {
    let grid = &layout.grid;
    let mut edges = Vec::with_capacity(layout.ncy * (layout.ncx + 1) + layout.ncx * (layout.ncy + 1));
    for (cj, &row) in layout.node_ys.iter().enumerate() {
        for (s, e, lo, hi) in segments(&layout.node_xs, grid.nx) {
            let cells: Vec<usize> = (s..=e).map(|i| grid.idx(i, row)).collect();
            let t_in: Vec<f64> = (s..e).map(|i| trans_x(perm, grid, i, row)).collect();
            edges.push(Edge {
                horizontal: true,
                cells,
                lo: lo.map(|ci| layout.node_id(ci, cj)),
                hi: hi.map(|ci| layout.node_id(ci, cj)),
                t_lo: if lo.is_some() { trans_x(perm, grid, s - 1, row) } else { 0.0 },
                t_hi: if hi.is_some() { trans_x(perm, grid, e, row) } else { 0.0 },
                t_in,
            });
        }
    }
    for (ci, &col) in layout.node_xs.iter().enumerate() {
        for (s, e, lo, hi) in segments(&layout.node_ys, grid.ny) {
            let cells: Vec<usize> = (s..=e).map(|j| grid.idx(col, j)).collect();
            let t_in: Vec<f64> = (s..e).map(|j| trans_y(perm, grid, col, j)).collect();
            edges.push(Edge {
                horizontal: false,
                cells,
                lo: lo.map(|cj| layout.node_id(ci, cj)),
                hi: hi.map(|cj| layout.node_id(ci, cj)),
                t_lo: if lo.is_some() { trans_y(perm, grid, col, s - 1) } else { 0.0 },
                t_hi: if hi.is_some() { trans_y(perm, grid, col, e) } else { 0.0 },
                t_in,
            });
        }
    }
    edges
}

/// Thomas algorithm for the edge operator: `diag` built from the couplings,
/// `-t_in` off-diagonals. At least one Dirichlet end keeps it nonsingular.
fn tridiag_solve(edge: &Edge, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = edge.cells.len();
    let mut diag = vec![0.0; n];
    diag[0] += edge.t_lo;
    diag[n - 1] += edge.t_hi;
    for (i, &t) in edge.t_in.iter().enumerate() {
        diag[i] += t;
        diag[i + 1] += t;
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if !(denom.abs() > 0.0) {
        return Err(CoreError::Singular("edge problem with no couplings".into()));
    }
    c[0] = if n > 1 { -edge.t_in[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for i in 1..n {
        let a = -edge.t_in[i - 1];
        denom = diag[i] - a * c[i - 1];
        if !(denom.abs() > 0.0) {
            return Err(CoreError::Singular(format!("edge pivot vanished at cell {i}")));
        }
        if i + 1 < n {
            c[i] = -edge.t_in[i] / denom;
        }
        d[i] = (rhs[i] - a * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let xi = x[i] - c[i] * x[i + 1];
        x[i] = xi;
    }
    Ok(x)
}

/// Solves basis ramps and the correction on every edge. `forcing` holds
/// `q + prescribed boundary influx` per fine cell.
pub fn solve_edges(edges: &[Edge], forcing: &[f64]) -> Result<Vec<EdgeSolution>> {
    edges.iter().map(|e| solve_edge(e, forcing)).collect()
}

fn solve_edge(edge: &Edge, forcing: &[f64]) -> Result<EdgeSolution> {
    let n = edge.cells.len();
    let ramp_lo = match (edge.lo, edge.hi) {
        (Some(_), Some(_)) => {
            let mut rhs = vec![0.0; n];
            rhs[0] = edge.t_lo;
            tridiag_solve(edge, &rhs)?
        }
        // one-ended edges have the constant as exact solution
        (Some(_), None) => vec![1.0; n],
        _ => Vec::new(),
    };
    let ramp_hi = match (edge.lo, edge.hi) {
        // complement keeps the pair summing to one exactly
        (Some(_), Some(_)) => ramp_lo.iter().map(|v| 1.0 - v).collect(),
        (None, Some(_)) => vec![1.0; n],
        _ => Vec::new(),
    };
    let f: Vec<f64> = edge.cells.iter().map(|&c| forcing[c]).collect();
    let correction = if f.iter().all(|&v| v == 0.0) {
        vec![0.0; n]
    } else {
        tridiag_solve(edge, &f)?
    };
    Ok(EdgeSolution { ramp_lo, ramp_hi, correction })
}

/// Per-cell forcing used by edge and dual-cell local problems: point
/// sources plus prescribed boundary influx.
pub fn forcing_vector(layout: &CoarseLayout, bc: &BoundarySpec) -> Vec<f64> {
    let grid = &layout.grid;
    let mut f = bc.source_vector(grid);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let influx = bc.cell_boundary_influx(grid, i, j);
            if influx != 0.0 {
                f[grid.idx(i, j)] += influx;
            }
        }
    }
    f
}
