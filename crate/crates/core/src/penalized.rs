//! L1-penalized spectral estimator for many covariates.
//!
//! The spectral quadratic `b' Sigma b + S' b` is minimized with an added
//! `lambda * ||b||_1` by cyclic coordinate descent. The reconstructed
//! `Sigma` need not be positive semidefinite in finite samples, so by default
//! its negative eigenvalues are clipped before solving.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::eigsolve::EigBackend;
use crate::error::{Error, Result};
use crate::panel::BalancedPanel;
use crate::spectral::{probe_quadratic, SpectralConfig};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone)]
pub struct LassoProblem {
    pub sigma_hat: DMatrix<f64>,
    pub s_hat: DVector<f64>,
    pub lambda: f64,
    /// Eigenvalue floor applied to `sigma_hat`; `None` refuses indefinite
    /// input instead.
    pub psd_floor: Option<f64>,
    /// Diagnostics only.
    pub c_lambda: Option<f64>,
    /// Diagnostics only: size of the true support when known.
    pub sparsity_s: Option<usize>,
}

impl LassoProblem {
    pub fn new(sigma_hat: DMatrix<f64>, s_hat: DVector<f64>, lambda: f64) -> Self {
        Self {
            sigma_hat,
            s_hat,
            lambda,
            psd_floor: Some(0.0),
            c_lambda: None,
            sparsity_s: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.s_hat.len();
        if self.sigma_hat.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: self.sigma_hat.len(),
            });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "penalty must be a nonnegative number, got {}",
                self.lambda
            )));
        }
        if let Some(f) = self.psd_floor {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::InvalidParameter(format!("psd floor must be nonnegative, got {f}")));
            }
        }
        Ok(())
    }

    /// `sigma_hat` symmetrized and, if needed, eigenvalue-clipped at the
    /// floor. A matrix already above the floor is returned unchanged.
    pub fn conditioned_sigma(&self) -> Result<DMatrix<f64>> {
        let sym = (&self.sigma_hat + self.sigma_hat.transpose()) * 0.5;
        if sym.is_empty() {
            return Ok(sym);
        }
        let eig = SymmetricEigen::new(sym.clone());
        let min_eig = eig.eigenvalues.min();
        match self.psd_floor {
            None if min_eig < 0.0 => Err(Error::NotConditioned { min_eig }),
            None => Ok(sym),
            Some(floor) if min_eig >= floor => Ok(sym),
            Some(floor) => {
                let clipped = eig.eigenvalues.map(|v| v.max(floor));
                let v = &eig.eigenvectors;
                let m = v * DMatrix::from_diagonal(&clipped) * v.transpose();
                Ok((&m + m.transpose()) * 0.5)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSolution {
    pub beta_lambda: Vec<f64>,
    pub kkt_residual: f64,
    /// Coordinate sweeps performed.
    pub iterations: usize,
    pub objective: f64,
}

/// `b' Sigma b + S' b + lambda * ||b||_1`.
pub fn lasso_objective(sigma: &DMatrix<f64>, s: &DVector<f64>, lambda: f64, b: &[f64]) -> f64 {
    let b = DVector::from_column_slice(b);
    (b.transpose() * sigma * &b)[(0, 0)] + s.dot(&b) + lambda * b.lp_norm(1)
}

/// Largest distance from zero to the subdifferential of the objective.
pub fn kkt_residual(sigma: &DMatrix<f64>, s: &DVector<f64>, lambda: f64, b: &[f64]) -> f64 {
    let bv = DVector::from_column_slice(b);
    let grad = sigma * &bv * 2.0 + s;
    grad.iter()
        .zip(b)
        .map(|(&g, &bk)| {
            if bk > 0.0 {
                (g + lambda).abs()
            } else if bk < 0.0 {
                (g - lambda).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn soft_threshold(c: f64, lambda: f64) -> f64 {
    if c > lambda {
        c - lambda
    } else if c < -lambda {
        c + lambda
    } else {
        0.0
    }
}

/// Cyclic coordinate descent until the KKT residual is at most `tol`.
pub fn solve_penalized(problem: &LassoProblem, tol: f64, max_iter: usize) -> Result<LassoSolution> {
    problem.validate()?;
    let sigma = problem.conditioned_sigma()?;
    let s = &problem.s_hat;
    let lambda = problem.lambda;
    let d = s.len();
    let mut b = vec![0.0; d];
    let mut objective = lasso_objective(&sigma, s, lambda, &b);
    let mut kkt = kkt_residual(&sigma, s, lambda, &b);
    let mut sweeps = 0;
    while kkt > tol {
        if sweeps == max_iter {
            return Err(Error::MaxIterExceeded {
                solution: Box::new(LassoSolution {
                    beta_lambda: b,
                    kkt_residual: kkt,
                    iterations: sweeps,
                    objective,
                }),
            });
        }
        for k in 0..d {
            let mut c = s[k];
            for j in 0..d {
                if j != k {
                    c += 2.0 * sigma[(k, j)] * b[j];
                }
            }
            let diag = sigma[(k, k)];
            if diag <= 0.0 {
                if c.abs() > lambda {
                    return Err(Error::NotConditioned { min_eig: diag });
                }
                b[k] = 0.0;
            } else {
                b[k] = -soft_threshold(c, lambda) / (2.0 * diag);
            }
        }
        sweeps += 1;
        let next = lasso_objective(&sigma, s, lambda, &b);
        debug_assert!(
            next <= objective + 1e-12 * (1.0 + objective.abs()),
            "objective rose from {objective} to {next}"
        );
        objective = next;
        kkt = kkt_residual(&sigma, s, lambda, &b);
    }
    Ok(LassoSolution {
        beta_lambda: b,
        kkt_residual: kkt,
        iterations: sweeps,
        objective,
    })
}

/// `C * (1 / min(N, T) + sqrt(ln d / (NT)))`.
pub fn lambda_rule(n: usize, t: usize, d: usize, c: f64) -> Result<f64> {
    if n == 0 || t == 0 || d == 0 || !(c > 0.0) {
        return Err(Error::InvalidParameter(
            "penalty rule needs positive N, T, d and C".into(),
        ));
    }
    let nt = n as f64 * t as f64;
    Ok(c * (1.0 / n.min(t) as f64 + ((d as f64).ln() / nt).sqrt()))
}

const PROBE_WARN_DIM: usize = 200;

/// Spectral quadratic from probes, then the penalized minimizer.
pub fn penalized_spectral(
    panel: &BalancedPanel,
    n_groups: usize,
    n_factors: usize,
    lambda: f64,
    backend: EigBackend,
) -> Result<LassoSolution> {
    let d = panel.n_covariates();
    if d > PROBE_WARN_DIM {
        warn!(
            "{d} covariates need {} eigenvalue-sum evaluations",
            1 + 2 * d + d * (d - 1) / 2
        );
    }
    let cfg = SpectralConfig::grouped(n_groups, n_factors).backend(backend);
    let q = probe_quadratic(panel, &cfg)?;
    solve_penalized(
        &LassoProblem::new(q.sigma_hat, q.s_hat, lambda),
        DEFAULT_TOL,
        DEFAULT_MAX_ITER,
    )
}
