//! Finite-difference Poisson oracle on the unit square.
//!
//! Solves lap(u) = psi on (0,1)^2 with constant Dirichlet boundary u = omega,
//! using the standard 5-point stencil and conjugate gradients on the
//! (symmetric positive definite) negated system. This solver is the
//! independent ground truth for the heat-diffusion dataset; it is validated
//! by residual checks, not by any model code.

use crate::error::{Error, Result};

/// A point source: psi takes `value` at interior grid node (ix, iy).
#[derive(Clone, Copy, Debug)]
pub struct Source {
    pub ix: usize,
    pub iy: usize,
    pub value: f64,
}

/// Solution on the full n-by-n grid (boundary included), row-major by y.
#[derive(Clone, Debug)]
pub struct GridSolution {
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridSolution {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.n + ix]
    }

    /// Bilinear interpolation at (x, y) in [0,1]^2.
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let n = self.n;
        let h = 1.0 / (n - 1) as f64;
        let fx = (x / h).clamp(0.0, (n - 1) as f64);
        let fy = (y / h).clamp(0.0, (n - 1) as f64);
        let ix = (fx as usize).min(n - 2);
        let iy = (fy as usize).min(n - 2);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let v00 = self.at(ix, iy);
        let v10 = self.at(ix + 1, iy);
        let v01 = self.at(ix, iy + 1);
        let v11 = self.at(ix + 1, iy + 1);
        v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty
    }

    /// Max interior residual |lap_h(u) - psi|.
    pub fn residual_inf(&self, sources: &[Source], omega: f64) -> f64 {
        let _ = omega;
        let n = self.n;
        let h2 = {
            let h = 1.0 / (n - 1) as f64;
            h * h
        };
        let mut psi = vec![0.0; n * n];
        for s in sources {
            psi[s.iy * n + s.ix] = s.value;
        }
        let mut worst = 0.0f64;
        for iy in 1..n - 1 {
            for ix in 1..n - 1 {
                let lap = (self.at(ix + 1, iy)
                    + self.at(ix - 1, iy)
                    + self.at(ix, iy + 1)
                    + self.at(ix, iy - 1)
                    - 4.0 * self.at(ix, iy))
                    / h2;
                worst = worst.max((lap - psi[iy * n + ix]).abs());
            }
        }
        worst
    }
}

/// Solve the Dirichlet problem to an interior residual below `tol`
/// (in the units of psi). Point sources must lie strictly inside the grid.
pub fn solve_poisson(grid_n: usize, sources: &[Source], omega: f64, tol: f64) -> Result<GridSolution> {
    assert!(grid_n >= 16, "solver needs grid_n >= 16, got {grid_n}");
    for s in sources {
        assert!(
            s.ix >= 1 && s.ix < grid_n - 1 && s.iy >= 1 && s.iy < grid_n - 1,
            "source ({}, {}) not strictly inside the grid",
            s.ix,
            s.iy
        );
    }
    let n = grid_n;
    let m = n - 2; // interior nodes per side
    let h = 1.0 / (n - 1) as f64;
    let h2 = h * h;

    let mut psi = vec![0.0; m * m];
    for s in sources {
        psi[(s.iy - 1) * m + (s.ix - 1)] = s.value;
    }

    // A u = b with A = -h^2 * lap_h (SPD): diag 4, off-diagonals -1.
    // b = -h^2 psi + boundary contributions (all equal to omega here).
    let idx = |ix: usize, iy: usize| iy * m + ix;
    let mut b = vec![0.0; m * m];
    for iy in 0..m {
        for ix in 0..m {
            let mut rhs = -h2 * psi[idx(ix, iy)];
            if ix == 0 {
                rhs += omega;
            }
            if ix == m - 1 {
                rhs += omega;
            }
            if iy == 0 {
                rhs += omega;
            }
            if iy == m - 1 {
                rhs += omega;
            }
            b[idx(ix, iy)] = rhs;
        }
    }

    let apply = |u: &[f64], out: &mut [f64]| {
        for iy in 0..m {
            for ix in 0..m {
                let mut v = 4.0 * u[idx(ix, iy)];
                if ix > 0 {
                    v -= u[idx(ix - 1, iy)];
                }
                if ix + 1 < m {
                    v -= u[idx(ix + 1, iy)];
                }
                if iy > 0 {
                    v -= u[idx(ix, iy - 1)];
                }
                if iy + 1 < m {
                    v -= u[idx(ix, iy + 1)];
                }
                out[idx(ix, iy)] = v;
            }
        }
    };

    // Start from the constant boundary field; for psi == 0 this is already
    // the exact solution.
    let mut u = vec![omega; m * m];
    let mut au = vec![0.0; m * m];
    apply(&u, &mut au);
    let mut r: Vec<f64> = b.iter().zip(&au).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rsq: f64 = r.iter().map(|v| v * v).sum();
    // The unscaled residual is |A u - b| / h^2.
    let target = tol * h2;
    let max_iters = 20 * m * m;
    let mut iters = 0;
    let mut ap = vec![0.0; m * m];
    while iters < max_iters {
        let rinf = r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if rinf <= target {
            break;
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, c)| a * c).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rsq / pap;
        for i in 0..u.len() {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rsq_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rsq_new / rsq;
        rsq = rsq_new;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        iters += 1;
        // Guard against residual drift: recompute explicitly now and then.
        if iters % 200 == 0 {
            apply(&u, &mut au);
            for i in 0..r.len() {
                r[i] = b[i] - au[i];
            }
            rsq = r.iter().map(|v| v * v).sum();
            for i in 0..p.len() {
                p[i] = r[i];
            }
        }
    }

    let mut values = vec![omega; n * n];
    for iy in 0..m {
        for ix in 0..m {
            values[(iy + 1) * n + (ix + 1)] = u[idx(ix, iy)];
        }
    }
    let solution = GridSolution { n, values };
    let achieved = solution.residual_inf(sources, omega);
    if achieved > tol {
        return Err(Error::PoissonNoConvergence {
            residual: achieved,
            iters,
        });
    }
    Ok(solution)
}
