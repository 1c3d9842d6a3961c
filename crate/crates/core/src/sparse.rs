//! Compressed sparse row matrices and the two linear solvers used by the
//! pressure stack: a dense-backed direct solve for the small local and
//! coarse systems, and Jacobi-preconditioned conjugate gradients for the
//! fine-grid system.

use crate::dense;
use crate::error::{CoreError, Result};

/// CSR matrix with sorted, duplicate-free column indices per row.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= n_rows || c >= n_cols {
                return Err(CoreError::Shape(format!(
                    "triplet ({r},{c}) outside {n_rows}x{n_cols} matrix"
                )));
            }
        }
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] = col_idx.len();
                last = Some((r, c));
            }
        }
        // rows without entries inherit the previous offset
        for r in 0..n_rows {
            if row_ptr[r + 1] < row_ptr[r] {
                row_ptr[r + 1] = row_ptr[r];
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = s;
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut a = vec![0.0; self.n_rows * self.n_cols];
        for r in 0..self.n_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                a[r * self.n_cols + self.col_idx[k]] = self.values[k];
            }
        }
        a
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_rows];
        for r in 0..self.n_rows.min(self.n_cols) {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }
}

/// A square linear system `A x = b`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn new(matrix: SparseMatrix, rhs: Vec<f64>) -> Result<Self> {
        if matrix.n_rows != matrix.n_cols {
            return Err(CoreError::Shape(format!(
                "system matrix must be square, got {}x{}",
                matrix.n_rows, matrix.n_cols
            )));
        }
        if rhs.len() != matrix.n_rows {
            return Err(CoreError::Shape(format!(
                "rhs length {} does not match {} rows",
                rhs.len(),
                matrix.n_rows
            )));
        }
        Ok(LinearSystem { matrix, rhs })
    }

    pub fn n(&self) -> usize {
        self.matrix.n_rows
    }
}

/// Largest system `solve_direct` will densify.
pub const DIRECT_MAX_N: usize = 4096;

/// Dense LU solve for small systems (local dual-cell problems, coarse
/// system). Checks `||Ax - b||_inf <= 1e-10 * (1 + ||b||_inf)` afterwards.
pub fn solve_direct(system: &LinearSystem) -> Result<Vec<f64>> {
    let n = system.n();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > DIRECT_MAX_N {
        return Err(CoreError::Config(format!(
            "solve_direct limited to {DIRECT_MAX_N} unknowns, got {n}; use solve_cg"
        )));
    }
    let a = system.matrix.to_dense();
    let x = dense::solve_dense(&a, &system.rhs)?;
    let mut ax = vec![0.0; n];
    system.matrix.mul_vec(&x, &mut ax);
    let b_inf = system.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let res = ax
        .iter()
        .zip(&system.rhs)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if !(res <= 1e-10 * (1.0 + b_inf)) {
        return Err(CoreError::Numerical(format!(
            "direct solve residual {res:.3e} exceeds tolerance (rhs scale {b_inf:.3e})"
        )));
    }
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct CgSolve {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final absolute 2-norm residual.
    pub residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for symmetric positive definite
/// systems; converges when `||r||_2 <= tol * ||b||_2`.
pub fn solve_cg(system: &LinearSystem, tol: f64, max_iter: usize) -> Result<CgSolve> {
    let n = system.n();
    let a = &system.matrix;
    let b = &system.rhs;
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgSolve {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let diag = a.diagonal();
    if let Some((r, &d)) = diag.iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
        return Err(CoreError::Numerical(format!(
            "Jacobi preconditioner needs a positive diagonal; row {r} has {d:.3e}"
        )));
    }
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();

    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let target = tol * b_norm;
    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let p_ap = dot(&p, &ap);
        if !(p_ap > 0.0) {
            return Err(CoreError::Numerical(format!(
                "CG breakdown: p'Ap = {p_ap:.3e}, matrix not positive definite"
            )));
        }
        let alpha = rz / p_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let r_norm = norm2(&r);
        if r_norm <= target {
            return Ok(CgSolve {
                x,
                iterations: it,
                residual: r_norm,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(CoreError::NoConvergence(format!(
        "CG did not reach {target:.3e} in {max_iter} iterations (residual {:.3e})",
        norm2(&r)
    )))
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn poisson_1d(n: usize) -> SparseMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        SparseMatrix::from_triplets(n, n, t).unwrap()
    }

    /// Test-side oracle: plain Gaussian elimination with partial pivoting,
    /// independent of the dense module.
    fn gauss_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
        for col in 0..n {
            let p = (col..n)
                .max_by(|&r, &s| {
                    a[r * n + col]
                        .abs()
                        .partial_cmp(&a[s * n + col].abs())
                        .unwrap()
                })
                .unwrap();
            for c in 0..n {
                a.swap(col * n + c, p * n + c);
            }
            b.swap(col, p);
            for r in col + 1..n {
                let f = a[r * n + col] / a[col * n + col];
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                b[r] -= f * b[col];
            }
        }
        for i in (0..n).rev() {
            for c in i + 1..n {
                b[i] -= a[i * n + c] * b[c];
            }
            b[i] /= a[i * n + i];
        }
        b
    }

    #[test]
    fn triplets_merge_and_sort() {
        let m = SparseMatrix::from_triplets(
            2,
            2,
            vec![(1, 0, 1.0), (0, 0, 2.0), (1, 0, 3.0), (0, 1, -1.0)],
        )
        .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.row_ptr, vec![0, 2, 3]);
        assert_eq!(m.col_idx, vec![0, 1, 0]);
        assert_eq!(m.values, vec![2.0, -1.0, 4.0]);
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn spmv_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.gen_range(1..50);
            let m = rng.gen_range(1..50);
            let mut trips = Vec::new();
            for _ in 0..rng.gen_range(0..4 * n) {
                trips.push((
                    rng.gen_range(0..n),
                    rng.gen_range(0..m),
                    rng.gen_range(-1.0..1.0),
                ));
            }
            let a = SparseMatrix::from_triplets(n, m, trips).unwrap();
            let d = a.to_dense();
            let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut y = vec![0.0; n];
            a.mul_vec(&x, &mut y);
            for r in 0..n {
                let want: f64 = (0..m).map(|c| d[r * m + c] * x[c]).sum();
                assert!((y[r] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_identity_and_diagonal() {
        let eye = SparseMatrix::from_triplets(3, 3, vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)])
            .unwrap();
        let sys = LinearSystem::new(eye, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(solve_direct(&sys).unwrap(), vec![1.0, 2.0, 3.0]);

        let d = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (1, 1, 4.0)]).unwrap();
        let sys = LinearSystem::new(d, vec![2.0, 2.0]).unwrap();
        assert_eq!(solve_direct(&sys).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn direct_matches_elimination_oracle() {
        let m = poisson_1d(5);
        let rhs = vec![1.0, 0.0, 2.0, -1.0, 0.5];
        let dense = m.to_dense();
        let sys = LinearSystem::new(m, rhs.clone()).unwrap();
        let x = solve_direct(&sys).unwrap();
        let want = gauss_solve(dense, rhs, 5);
        for i in 0..5 {
            assert!((x[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn direct_reports_singular() {
        let m =
            SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)])
                .unwrap();
        let sys = LinearSystem::new(m, vec![1.0, 1.0]).unwrap();
        match solve_direct(&sys) {
            Err(CoreError::Singular(_)) => {}
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn cg_identity_converges_first_iteration() {
        let eye =
            SparseMatrix::from_triplets(4, 4, (0..4).map(|i| (i, i, 1.0)).collect()).unwrap();
        let sys = LinearSystem::new(eye, vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let out = solve_cg(&sys, 1e-12, 10).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, vec![1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn cg_zero_rhs() {
        let m = poisson_1d(8);
        let sys = LinearSystem::new(m, vec![0.0; 8]).unwrap();
        let out = solve_cg(&sys, 1e-12, 100).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cg_matches_direct_on_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let n = rng.gen_range(2..60);
            let mut trips = Vec::new();
            for i in 0..n {
                trips.push((i, i, 4.0 + rng.gen_range(0.0..1.0)));
                if i + 1 < n {
                    let v = rng.gen_range(-1.0..1.0);
                    trips.push((i, i + 1, v));
                    trips.push((i + 1, i, v));
                }
            }
            let m = SparseMatrix::from_triplets(n, n, trips).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sys = LinearSystem::new(m, b).unwrap();
            let xd = solve_direct(&sys).unwrap();
            let xc = solve_cg(&sys, 1e-12, 10 * n).unwrap().x;
            for i in 0..n {
                assert!((xd[i] - xc[i]).abs() < 1e-10, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn cg_iteration_limit_reports_residual() {
        let m = poisson_1d(50);
        let sys = LinearSystem::new(m, vec![1.0; 50]).unwrap();
        match solve_cg(&sys, 1e-14, 2) {
            Err(CoreError::NoConvergence(msg)) => assert!(msg.contains("residual")),
            other => panic!("expected no-convergence, got {other:?}"),
        }
    }

    #[test]
    fn cg_rejects_indefinite() {
        let m = SparseMatrix::from_triplets(
            2,
            2,
            vec![(0, 0, 1.0), (0, 1, 3.0), (1, 0, 3.0), (1, 1, 1.0)],
        )
        .unwrap();
        // rhs must not be an eigenvector or CG converges before it ever
        // probes the negative-curvature direction
        let sys = LinearSystem::new(m, vec![1.0, 0.0]).unwrap();
        assert!(solve_cg(&sys, 1e-10, 100).is_err());
    }
}
