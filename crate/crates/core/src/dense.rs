//! Dense kernels shared by the solver stack: row-major GEMM (wrapping
//! `matrixmultiply`), LU with partial pivoting for the small local systems,
//! and a blocked Cholesky for the GRF covariance factor.

use crate::error::{CoreError, Result};

/// C = alpha * op(A) * op(B) + beta * C, all row-major.
/// op(A) is `m x k`; if `ta` the buffer holds the `k x m` transpose (same for
/// `tb` with B `k x n` / `n x k`). C is `m x n`.
pub fn gemm(
    ta: bool,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "A buffer length");
    assert_eq!(b.len(), k * n, "B buffer length");
    assert_eq!(c.len(), m * n, "C buffer length");
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// LU factorization with partial pivoting of a dense row-major `n x n`
/// matrix, kept together with the pivot sequence.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl LuFactor {
    pub fn new(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut lu = a.to_vec();
        let mut piv = vec![0usize; n];
        let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for col in 0..n {
            let mut p = col;
            let mut best = lu[col * n + col].abs();
            for r in col + 1..n {
                let v = lu[r * n + col].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if !(best > scale * 1e-14) || !best.is_finite() {
                return Err(CoreError::Singular(format!(
                    "pivot {best:.3e} at column {col} (matrix scale {scale:.3e})"
                )));
            }
            if p != col {
                for c in 0..n {
                    lu.swap(col * n + c, p * n + c);
                }
            }
            piv[col] = p;
            let d = lu[col * n + col];
            for r in col + 1..n {
                let f = lu[r * n + col] / d;
                lu[r * n + col] = f;
                if f != 0.0 {
                    let (hi, lo) = lu.split_at_mut(r * n);
                    let pivot_row = &hi[col * n + col + 1..col * n + n];
                    let row = &mut lo[col + 1..n];
                    for (x, &pv) in row.iter_mut().zip(pivot_row) {
                        *x -= f * pv;
                    }
                }
            }
        }
        Ok(LuFactor { n, lu, piv })
    }

    pub fn solve_into(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        // the factorization swaps whole rows, so all permutations must be
        // applied before the forward sweep, not interleaved with it
        for i in 0..n {
            b.swap(i, self.piv[i]);
        }
        for i in 0..n {
            let xi = b[i];
            if xi != 0.0 {
                for r in i + 1..n {
                    b[r] -= self.lu[r * n + i] * xi;
                }
            }
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for c in i + 1..n {
                s -= self.lu[i * n + c] * b[c];
            }
            b[i] = s / self.lu[i * n + i];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_into(&mut x);
        x
    }
}

/// Solves `A x = b` densely with one step of iterative refinement; the
/// refinement keeps local-problem partition-of-unity defects near machine
/// precision even for high-contrast permeability.
pub fn solve_dense(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let lu = LuFactor::new(a, b.len())?;
    Ok(refined_solve(&lu, a, b))
}

/// Solve with an existing factorization plus one step of iterative
/// refinement against the original matrix `a`; keeps residuals near machine
/// precision even for poorly conditioned local problems.
pub fn refined_solve(lu: &LuFactor, a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = lu.solve(b);
    let mut r = b.to_vec();
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += a[i * n + j] * x[j];
        }
        r[i] -= s;
    }
    lu.solve_into(&mut r);
    for (xi, di) in x.iter_mut().zip(&r) {
        *xi += di;
    }
    x
}

/// In-place blocked Cholesky (lower triangle) of a symmetric positive
/// definite row-major matrix. The strict upper triangle is left unspecified.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    assert_eq!(a.len(), n * n);
    const BLOCK: usize = 224;
    let mut p = 0;
    while p < n {
        let b = BLOCK.min(n - p);
        // unblocked factor of the panel columns p..p+b over rows p..n
        for j in p..p + b {
            let mut d = a[j * n + j];
            for k in p..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(CoreError::Singular(format!(
                    "Cholesky pivot {d:.3e} at row {j}"
                )));
            }
            let ljj = d.sqrt();
            a[j * n + j] = ljj;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in p..j {
                    s -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = s / ljj;
            }
        }
        let pe = p + b;
        if pe < n {
            // trailing update A22 -= L21 * L21^T, lower block rows only
            let mut r = pe;
            while r < n {
                let rb = BLOCK.min(n - r);
                let cols = r + rb - pe;
                // C (rb x cols) -= Ar (rb x b) * Ac^T, Ac is (cols x b)
                let (m, k, nn) = (rb, b, cols);
                let a_ptr = a.as_ptr();
                let c_ptr = a.as_mut_ptr();
                unsafe {
                    matrixmultiply::dgemm(
                        m,
                        k,
                        nn,
                        -1.0,
                        a_ptr.add(r * n + p),
                        n as isize,
                        1,
                        a_ptr.add(pe * n + p),
                        1,
                        n as isize,
                        1.0,
                        c_ptr.add(r * n + pe),
                        n as isize,
                        1,
                    );
                }
                r += rb;
            }
        }
        p += b;
    }
    // zero the strict upper triangle so L can be used directly
    for i in 0..n {
        for j in i + 1..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// y = L * z for a lower-triangular row-major L.
pub fn lower_tri_matvec(l: &[f64], n: usize, z: &[f64], y: &mut [f64]) {
    assert_eq!(l.len(), n * n);
    assert_eq!(z.len(), n);
    assert_eq!(y.len(), n);
    for i in 0..n {
        let row = &l[i * n..i * n + i + 1];
        let mut s = 0.0;
        for (lk, zk) in row.iter().zip(&z[..i + 1]) {
            s += lk * zk;
        }
        y[i] = s;
    }
}
