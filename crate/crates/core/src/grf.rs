//! Stationary Gaussian random fields for log-permeability: exponential
//! covariance over cell centers, sampled by dense Cholesky factorization.
//!
//! The factorization is the expensive part (cubic in cell count), so
//! `Sampler` does it once and then draws any number of realizations. Each
//! realization uses its own counter-mode RNG stream, so realization `i` is
//! the same no matter how many others are drawn or in what order.

use crate::dense;
use crate::error::{CoreError, Result};
use crate::grid::{FineGrid, PermField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Isotropic exponential covariance `sigma2 * exp(-dist / corr_len)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrfSpec {
    pub sigma2: f64,
    pub corr_len: f64,
}

impl GrfSpec {
    pub fn new(sigma2: f64, corr_len: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !(corr_len > 0.0) {
            return Err(CoreError::Config(format!(
                "GRF parameters must be positive, got sigma2={sigma2}, corr_len={corr_len}"
            )));
        }
        Ok(GrfSpec { sigma2, corr_len })
    }

    pub fn covariance(&self, dist: f64) -> f64 {
        self.sigma2 * (-dist / self.corr_len).exp()
    }
}

/// Dense covariance matrix between all pairs of cell centers, row-major.
pub fn build_covariance(spec: &GrfSpec, grid: &FineGrid) -> Vec<f64> {
    let n = grid.n_cells();
    let mut centers = Vec::with_capacity(n);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            centers.push(grid.cell_center(i, j));
        }
    }
    let mut cov = vec![0.0; n * n];
    for r in 0..n {
        let (xr, yr) = centers[r];
        for c in 0..=r {
            let (xc, yc) = centers[c];
            let d = ((xr - xc).powi(2) + (yr - yc).powi(2)).sqrt();
            let v = spec.covariance(d);
            cov[r * n + c] = v;
            cov[c * n + r] = v;
        }
    }
    cov
}

/// Relative nugget sizes tried in turn when the covariance fails to factor.
const NUGGETS: [f64; 3] = [0.0, 1e-12, 1e-8];

/// Holds the Cholesky factor of the covariance for repeated sampling.
pub struct Sampler {
    spec: GrfSpec,
    nx: usize,
    ny: usize,
    n: usize,
    /// Lower-triangular factor, row-major `n x n`.
    chol: Vec<f64>,
}

impl Sampler {
    pub fn new(spec: GrfSpec, grid: &FineGrid) -> Result<Self> {
        let n = grid.n_cells();
        let base = build_covariance(&spec, grid);
        let mut last_err = None;
        for nugget in NUGGETS {
            let mut work = base.clone();
            if nugget > 0.0 {
                let bump = nugget * spec.sigma2;
                for d in 0..n {
                    work[d * n + d] += bump;
                }
            }
            match dense::cholesky_in_place(&mut work, n) {
                Ok(()) => {
                    return Ok(Sampler {
                        spec,
                        nx: grid.nx,
                        ny: grid.ny,
                        n,
                        chol: work,
                    })
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(CoreError::Singular(format!(
            "covariance not positive definite even with nugget {:.0e}: {}",
            NUGGETS[NUGGETS.len() - 1],
            last_err.expect("at least one attempt")
        )))
    }

    pub fn spec(&self) -> &GrfSpec {
        &self.spec
    }

    /// One log-permeability realization. `master_seed` keys the whole
    /// campaign; `realization` selects an independent RNG stream.
    pub fn sample_log(&self, master_seed: u64, realization: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(realization);
        let z: Vec<f64> = (0..self.n)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut y = vec![0.0; self.n];
        dense::lower_tri_matvec(&self.chol, self.n, &z, &mut y);
        y
    }

    pub fn sample_field(
        &self,
        grid: &FineGrid,
        master_seed: u64,
        realization: u64,
    ) -> Result<PermField> {
        self.check_grid(grid)?;
        PermField::from_log(self.sample_log(master_seed, realization), grid)
    }

    /// Realizations `0..count` in order.
    pub fn sample_fields(
        &self,
        grid: &FineGrid,
        master_seed: u64,
        count: usize,
    ) -> Result<Vec<PermField>> {
        self.check_grid(grid)?;
        (0..count)
            .map(|r| self.sample_field(grid, master_seed, r as u64))
            .collect()
    }

    fn check_grid(&self, grid: &FineGrid) -> Result<()> {
        if grid.nx != self.nx || grid.ny != self.ny {
            return Err(CoreError::Shape(format!(
                "sampler built for {}x{} grid, got {}x{}",
                self.nx, self.ny, grid.nx, grid.ny
            )));
        }
        Ok(())
    }
}
