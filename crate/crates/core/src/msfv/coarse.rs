//! Coarse-scale system over the nodal values, prolongation back to the
//! fine grid, and the conservative flux reconstruction.
//!
//! Each primal cell contributes one balance equation: the TPFA flux of the
//! interpolated pressure across its boundary must match its wells and
//! prescribed boundary inflow. Because the bases partition unity the rows
//! sum to zero, and one row is replaced to pin the pressure level at the
//! same cell the fine solver pins.

use super::BasisSet;
use crate::dense::solve_dense;
use crate::error::{CoreError, Result};
use crate::fvm::{trans_x, trans_y, BoundarySpec, FluxField, Side};
use crate::grid::{CoarseLayout, FineGrid, PermField};

/// Node ids whose basis support can reach cell `(i, j)`.
fn nodes_near(layout: &CoarseLayout, i: usize, j: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(4);
    for (ci, &x) in layout.node_xs.iter().enumerate() {
        if x.abs_diff(i) > layout.nfx {
            continue;
        }
        for (cj, &y) in layout.node_ys.iter().enumerate() {
            if y.abs_diff(j) <= layout.nfy {
                out.push(layout.node_id(ci, cj));
            }
        }
    }
    out
}

/// Assembles and solves the pinned coarse system; returns one pressure
/// value per node.
pub fn solve_coarse(
    set: &BasisSet,
    perm: &PermField,
    layout: &CoarseLayout,
    bc: &BoundarySpec,
) -> Result<Vec<f64>> {
    let grid = &layout.grid;
    let n = layout.n_nodes();
    let mut a = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    let mut face = |row_lo: usize, row_hi: usize, c_lo: usize, c_hi: usize, t: f64| {
        let (il, jl) = (c_lo % grid.nx, c_lo / grid.nx);
        let mut ks = nodes_near(layout, il, jl);
        ks.extend(nodes_near(layout, c_hi % grid.nx, c_hi / grid.nx));
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            let b = &set.bases[k];
            let coeff = t * (b.get(il, jl) - b.get(c_hi % grid.nx, c_hi / grid.nx));
            if coeff != 0.0 {
                a[row_lo * n + k] += coeff;
                a[row_hi * n + k] -= coeff;
            }
        }
        let fc = t * (set.correction[c_lo] - set.correction[c_hi]);
        rhs[row_lo] -= fc;
        rhs[row_hi] += fc;
    };
    for bx in 1..layout.ncx {
        let xf = bx * layout.nfx;
        for j in 0..grid.ny {
            let pj = j / layout.nfy;
            face(
                layout.node_id(bx - 1, pj),
                layout.node_id(bx, pj),
                grid.idx(xf - 1, j),
                grid.idx(xf, j),
                trans_x(perm, grid, xf - 1, j),
            );
        }
    }
    for by in 1..layout.ncy {
        let yf = by * layout.nfy;
        for i in 0..grid.nx {
            let pi = i / layout.nfx;
            face(
                layout.node_id(pi, by - 1),
                layout.node_id(pi, by),
                grid.idx(i, yf - 1),
                grid.idx(i, yf),
                trans_y(perm, grid, i, yf - 1),
            );
        }
    }
    for &(cell, rate) in &bc.sources {
        let (pi, pj) = layout.primal_of_cell(cell % grid.nx, cell / grid.nx);
        rhs[layout.node_id(pi, pj)] += rate;
    }
    for (s, along_x) in [
        (Side::Left, false),
        (Side::Right, false),
        (Side::Bottom, true),
        (Side::Top, true),
    ] {
        let count = if along_x { grid.nx } else { grid.ny };
        for c in 0..count {
            let (i, j) = match s {
                Side::Left => (0, c),
                Side::Right => (grid.nx - 1, c),
                Side::Bottom => (c, 0),
                Side::Top => (c, grid.ny - 1),
            };
            let influx = bc.face_influx(grid, s, i, j);
            if influx != 0.0 {
                let (pi, pj) = layout.primal_of_cell(i, j);
                rhs[layout.node_id(pi, pj)] += influx;
            }
        }
    }
    // pin: replace the row of the primal holding the pinned cell with the
    // interpolation identity at that cell
    let (pi, pj) = (bc.pin_cell % grid.nx, bc.pin_cell / grid.nx);
    let (pci, pcj) = layout.primal_of_cell(pi, pj);
    let row = layout.node_id(pci, pcj);
    for v in a[row * n..(row + 1) * n].iter_mut() {
        *v = 0.0;
    }
    for k in nodes_near(layout, pi, pj) {
        a[row * n + k] = set.bases[k].get(pi, pj);
    }
    rhs[row] = bc.pin_value - set.correction[bc.pin_cell];
    solve_dense(&a, &rhs).map_err(|e| {
        CoreError::Singular(format!("coarse system failed to solve: {e}"))
    })
}

/// Fine-grid pressure from nodal values: correction plus the weighted
/// basis superposition.
pub fn interpolate(set: &BasisSet, coarse: &[f64], grid: &FineGrid) -> Vec<f64> {
    let mut p = set.correction.clone();
    for b in &set.bases {
        let pc = coarse[b.node];
        if pc == 0.0 {
            continue;
        }
        for (r, (i, j)) in b.rect.cells().enumerate() {
            p[grid.idx(i, j)] += b.values[r] * pc;
        }
    }
    p
}

/// Conservative face fluxes from the interpolated pressure: primal-cell
/// boundary faces take its TPFA flux directly, interior faces come from a
/// Neumann re-solve inside each primal cell so every cell balances.
pub fn reconstruct_flux(
    pms: &[f64],
    perm: &PermField,
    layout: &CoarseLayout,
    bc: &BoundarySpec,
) -> Result<FluxField> {
    let grid = &layout.grid;
    if pms.len() != grid.n_cells() {
        return Err(CoreError::Shape(format!(
            "pressure length {} does not match grid",
            pms.len()
        )));
    }
    let mut flux = FluxField::zeros(grid);
    for j in 0..grid.ny {
        let kl = flux.fx_idx(0, j);
        flux.fx[kl] = bc.face_influx(grid, Side::Left, 0, j);
        let kr = flux.fx_idx(grid.nx, j);
        flux.fx[kr] = -bc.face_influx(grid, Side::Right, grid.nx - 1, j);
    }
    for i in 0..grid.nx {
        let kb = flux.fy_idx(i, 0);
        flux.fy[kb] = bc.face_influx(grid, Side::Bottom, i, 0);
        let kt = flux.fy_idx(i, grid.ny);
        flux.fy[kt] = -bc.face_influx(grid, Side::Top, i, grid.ny - 1);
    }
    for bx in 1..layout.ncx {
        let xf = bx * layout.nfx;
        for j in 0..grid.ny {
            let t = trans_x(perm, grid, xf - 1, j);
            let k = flux.fx_idx(xf, j);
            flux.fx[k] = t * (pms[grid.idx(xf - 1, j)] - pms[grid.idx(xf, j)]);
        }
    }
    for by in 1..layout.ncy {
        let yf = by * layout.nfy;
        for i in 0..grid.nx {
            let t = trans_y(perm, grid, i, yf - 1);
            let k = flux.fy_idx(i, yf);
            flux.fy[k] = t * (pms[grid.idx(i, yf - 1)] - pms[grid.idx(i, yf)]);
        }
    }
    let q = bc.source_vector(grid);
    for cj in 0..layout.ncy {
        for ci in 0..layout.ncx {
            let rect = layout.primal_rect(ci, cj);
            let m = rect.len();
            let mut a = vec![0.0; m * m];
            let mut b = vec![0.0; m];
            for (i, j) in rect.cells() {
                let r = rect.offset(i, j);
                b[r] = q[grid.idx(i, j)] + bc.cell_boundary_influx(grid, i, j);
                let mut neighbor = |ni: usize, nj: usize, t: f64| {
                    if rect.contains(ni, nj) {
                        a[r * m + r] += t;
                        a[r * m + rect.offset(ni, nj)] -= t;
                    } else {
                        // prescribed outflux across the primal boundary
                        b[r] -= t * (pms[grid.idx(i, j)] - pms[grid.idx(ni, nj)]);
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
            let (ni, nj) = layout.node_cell(ci, cj);
            let pr = rect.offset(ni, nj);
            for v in a[pr * m..(pr + 1) * m].iter_mut() {
                *v = 0.0;
            }
            a[pr * m + pr] = 1.0;
            b[pr] = pms[grid.idx(ni, nj)];
            let x = solve_dense(&a, &b).map_err(|e| {
                CoreError::Singular(format!("flux reconstruction in primal ({ci}, {cj}): {e}"))
            })?;
            for (i, j) in rect.cells() {
                if i + 1 <= rect.x1 {
                    let t = trans_x(perm, grid, i, j);
                    let k = flux.fx_idx(i + 1, j);
                    flux.fx[k] = t * (x[rect.offset(i, j)] - x[rect.offset(i + 1, j)]);
                }
                if j + 1 <= rect.y1 {
                    let t = trans_y(perm, grid, i, j);
                    let k = flux.fy_idx(i, j + 1);
                    flux.fy[k] = t * (x[rect.offset(i, j)] - x[rect.offset(i, j + 1)]);
                }
            }
        }
    }
    Ok(flux)
}
