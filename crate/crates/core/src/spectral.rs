//! Spectral estimator of the slope vector.
//!
//! For a candidate slope `b`, the `N x N` matrix
//! `A^b[i, j] = (1 / NT) * sum_t ((y_it - x_it'b) - (y_jt - x_jt'b))^2`
//! has, up to a vanishing remainder, at most `2GM + 2` non-negligible
//! eigenvalues, and the sum of those eigenvalues is a convex quadratic in `b`
//! minimized at the true slope. The estimator evaluates that eigenvalue sum at
//! `1 + 2d + d(d-1)/2` probe points, reads off the quadratic's coefficients,
//! and returns its minimizer.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::eigsolve::{dense_eigenvalues, top_k_abs_eigenvalues, EigBackend, SymmetricOperator};
use crate::error::{Error, Result};
use crate::panel::BalancedPanel;
use crate::rng::RngSpec;

/// `A^b` as a matrix-free operator. One apply costs `O(NT)` per column.
#[derive(Debug, Clone)]
pub struct ResidualDifferenceOperator {
    residuals: DMatrix<f64>,
    row_sq: DVector<f64>,
    scale: f64,
}

impl ResidualDifferenceOperator {
    pub fn new(panel: &BalancedPanel, b: &[f64]) -> Result<Self> {
        Ok(Self::from_residuals(panel.residuals(b)?))
    }

    pub fn from_residuals(residuals: DMatrix<f64>) -> Self {
        let (n, t) = residuals.shape();
        let row_sq = DVector::from_iterator(
            n,
            (0..n).map(|i| residuals.row(i).iter().map(|r| r * r).sum()),
        );
        Self {
            residuals,
            row_sq,
            scale: 1.0 / (n as f64 * t as f64),
        }
    }

    pub fn residuals(&self) -> &DMatrix<f64> {
        &self.residuals
    }
}

impl SymmetricOperator for ResidualDifferenceOperator {
    fn dim(&self) -> usize {
        self.residuals.nrows()
    }

    // A v = (s (1'v) + 1 (s'v) - 2 R (R'v)) / NT
    fn apply_block(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let col_sums = v.row_sum();
        let s_v = self.row_sq.transpose() * v;
        let rt_v = self.residuals.transpose() * v;
        let mut out = &self.residuals * rt_v * -2.0;
        for j in 0..v.ncols() {
            for i in 0..n {
                out[(i, j)] += self.row_sq[i] * col_sums[j] + s_v[j];
            }
        }
        out * self.scale
    }

    /// Entries from the squared-difference definition: exact zero diagonal
    /// and exact symmetry.
    fn to_dense(&self) -> Option<DMatrix<f64>> {
        let (n, t) = self.residuals.shape();
        let mut a = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in (j + 1)..n {
                let mut acc = 0.0;
                for s in 0..t {
                    let diff = self.residuals[(i, s)] - self.residuals[(j, s)];
                    acc += diff * diff;
                }
                let v = acc * self.scale;
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        Some(a)
    }
}

/// How many eigenvalues enter the sum, and how they are computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    pub k_eigs: usize,
    pub backend: EigBackend,
    /// Sketch seed for the randomized backend; each probe point uses its own
    /// derived stream.
    pub rng: RngSpec,
}

impl SpectralConfig {
    /// `2GM + 2` eigenvalues.
    pub fn grouped(n_groups: usize, n_factors: usize) -> Self {
        Self::with_k(2 * n_groups * n_factors + 2)
    }

    /// `2(G + M + 1)` eigenvalues, for covariates with a generic rank-`M`
    /// systematic part.
    pub fn relaxed(n_groups: usize, n_factors: usize) -> Self {
        Self::with_k(2 * (n_groups + n_factors + 1))
    }

    /// `2J + 2` eigenvalues, for `J` interactive factors.
    pub fn interactive(n_factors: usize) -> Self {
        Self::with_k(2 * n_factors + 2)
    }

    pub fn with_k(k_eigs: usize) -> Self {
        Self {
            k_eigs,
            backend: EigBackend::default(),
            rng: RngSpec::new(0, 0),
        }
    }

    pub fn backend(mut self, backend: EigBackend) -> Self {
        self.backend = backend;
        self
    }

    pub fn rng(mut self, rng: RngSpec) -> Self {
        self.rng = rng;
        self
    }
}

fn effective_k(k_eigs: usize, n: usize) -> Result<usize> {
    if k_eigs == 0 {
        return Err(Error::InvalidParameter(
            "number of eigenvalues must be positive".into(),
        ));
    }
    if k_eigs > n {
        warn!("requested {k_eigs} eigenvalues of a {n}x{n} matrix; summing all {n} instead");
        return Ok(n);
    }
    Ok(k_eigs)
}

fn eigen_sum(panel: &BalancedPanel, b: &[f64], k: usize, cfg: &SpectralConfig, rng: RngSpec) -> Result<f64> {
    let op = ResidualDifferenceOperator::new(panel, b)?;
    let values = top_k_abs_eigenvalues(&op, k, cfg.backend, rng)?;
    Ok(values.iter().sum())
}

/// Sum of the `k_eigs` eigenvalues of `A^b` with largest magnitude.
pub fn f_hat(panel: &BalancedPanel, b: &[f64], cfg: &SpectralConfig) -> Result<f64> {
    let k = effective_k(cfg.k_eigs, panel.n_units())?;
    eigen_sum(panel, b, k, cfg, cfg.rng)
}

/// Probe points in evaluation order: `0`, then `e_k, -e_k` for each `k`,
/// then `e_k + e_l` for `k > l`.
pub fn probe_points(d: usize) -> Vec<Vec<f64>> {
    let unit = |k: usize, sign: f64| {
        let mut v = vec![0.0; d];
        v[k] = sign;
        v
    };
    let mut points = vec![vec![0.0; d]];
    for k in 0..d {
        points.push(unit(k, 1.0));
        points.push(unit(k, -1.0));
    }
    for k in 0..d {
        for l in 0..k {
            let mut v = vec![0.0; d];
            v[k] = 1.0;
            v[l] = 1.0;
            points.push(v);
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeValue {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Coefficients of `b' Sigma b + S' b + L` read off probe evaluations.
#[derive(Debug, Clone)]
pub struct QuadraticEstimate {
    pub sigma_hat: DMatrix<f64>,
    pub s_hat: DVector<f64>,
    pub l_hat: f64,
    pub probe_values: Vec<ProbeValue>,
}

impl QuadraticEstimate {
    /// Reconstructs from an arbitrary evaluator of the quadratic. Probe
    /// evaluations may run in parallel; each sees its probe index.
    pub fn from_evaluator<F>(d: usize, eval: F) -> Result<Self>
    where
        F: Fn(usize, &[f64]) -> Result<f64> + Sync,
    {
        if d == 0 {
            return Err(Error::InvalidParameter(
                "spectral estimator needs at least one covariate".into(),
            ));
        }
        let points = probe_points(d);
        let values: Vec<f64> = points
            .par_iter()
            .enumerate()
            .map(|(idx, p)| eval(idx, p))
            .collect::<Result<_>>()?;
        Ok(Self::from_probe_values(d, &values, points))
    }

    fn from_probe_values(d: usize, values: &[f64], points: Vec<Vec<f64>>) -> Self {
        let l_hat = values[0];
        let plus = |k: usize| values[1 + 2 * k];
        let minus = |k: usize| values[2 + 2 * k];
        let s_hat = DVector::from_fn(d, |k, _| (plus(k) - minus(k)) / 2.0);
        let mut sigma_hat = DMatrix::zeros(d, d);
        for k in 0..d {
            sigma_hat[(k, k)] = (plus(k) + minus(k)) / 2.0 - l_hat;
        }
        let mut idx = 1 + 2 * d;
        for k in 0..d {
            for l in 0..k {
                let v = (values[idx]
                    - sigma_hat[(k, k)]
                    - sigma_hat[(l, l)]
                    - s_hat[k]
                    - s_hat[l]
                    - l_hat)
                    / 2.0;
                sigma_hat[(k, l)] = v;
                sigma_hat[(l, k)] = v;
                idx += 1;
            }
        }
        let probe_values = points
            .into_iter()
            .zip(values)
            .map(|(point, &value)| ProbeValue { point, value })
            .collect();
        Self {
            sigma_hat,
            s_hat,
            l_hat,
            probe_values,
        }
    }

    pub fn dim(&self) -> usize {
        self.s_hat.len()
    }

    pub fn evaluate(&self, b: &[f64]) -> f64 {
        let b = DVector::from_column_slice(b);
        (b.transpose() * &self.sigma_hat * &b)[(0, 0)] + self.s_hat.dot(&b) + self.l_hat
    }
}

const RCOND_MIN: f64 = 1e-12;

/// Spectral estimate together with the quadratic it minimizes.
#[derive(Debug, Clone)]
pub struct SpectralFit {
    pub beta_tilde: Vec<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub s_hat: DVector<f64>,
    pub l_hat: f64,
    pub probe_values: Vec<ProbeValue>,
    /// Smallest and largest eigenvalue of `sigma_hat`.
    pub condition: (f64, f64),
    /// Eigenvalues actually summed per probe.
    pub k_eigs: usize,
}

impl SpectralFit {
    /// `beta_tilde = -sigma_hat^{-1} s_hat / 2`. Singular `sigma_hat` is an
    /// error, never regularized.
    pub fn from_quadratic(q: QuadraticEstimate, k_eigs: usize) -> Result<Self> {
        let eig = SymmetricEigen::new(q.sigma_hat.clone()).eigenvalues;
        let min_eig = eig.min();
        let max_eig = eig.max();
        let largest = eig.amax();
        let smallest = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let rcond = if largest > 0.0 { smallest / largest } else { 0.0 };
        if !(rcond >= RCOND_MIN) {
            return Err(Error::SingularSigma {
                rcond,
                min_eig,
                max_eig,
            });
        }
        let solution = q
            .sigma_hat
            .clone()
            .lu()
            .solve(&q.s_hat)
            .ok_or(Error::SingularSigma {
                rcond,
                min_eig,
                max_eig,
            })?;
        let beta_tilde = solution.iter().map(|v| -0.5 * v).collect();
        Ok(Self {
            beta_tilde,
            sigma_hat: q.sigma_hat,
            s_hat: q.s_hat,
            l_hat: q.l_hat,
            probe_values: q.probe_values,
            condition: (min_eig, max_eig),
            k_eigs,
        })
    }
}

/// Probe evaluations of `f_hat` turned into quadratic coefficients.
pub fn probe_quadratic(panel: &BalancedPanel, cfg: &SpectralConfig) -> Result<QuadraticEstimate> {
    let k = effective_k(cfg.k_eigs, panel.n_units())?;
    // The operator has rank at most T + 2 and zero trace, so summing that
    // many eigenvalues gives zero at every probe.
    if k >= panel.n_periods() + 2 {
        warn!(
            "{k} eigenvalues with only {} periods: the eigenvalue sum is identically zero \
             and the quadratic carries no information",
            panel.n_periods()
        );
    }
    QuadraticEstimate::from_evaluator(panel.n_covariates(), |idx, b| {
        eigen_sum(panel, b, k, cfg, cfg.rng.derive(idx as u64))
    })
}

pub fn reconstruct_quadratic(panel: &BalancedPanel, cfg: &SpectralConfig) -> Result<SpectralFit> {
    let k = effective_k(cfg.k_eigs, panel.n_units())?;
    SpectralFit::from_quadratic(probe_quadratic(panel, cfg)?, k)
}

/// Spectral estimate with `2GM + 2` eigenvalues.
pub fn spectral_estimate(
    panel: &BalancedPanel,
    n_groups: usize,
    n_factors: usize,
    backend: EigBackend,
) -> Result<SpectralFit> {
    if n_groups == 0 || n_factors == 0 {
        return Err(Error::InvalidParameter(
            "number of groups and of covariate factors must be positive".into(),
        ));
    }
    reconstruct_quadratic(panel, &SpectralConfig::grouped(n_groups, n_factors).backend(backend))
}

/// Spectral estimate for an interactive fixed-effect model with `J` factors
/// (`2J + 2` eigenvalues).
pub fn spectral_estimate_ife(
    panel: &BalancedPanel,
    n_factors: usize,
    backend: EigBackend,
) -> Result<SpectralFit> {
    if n_factors == 0 {
        return Err(Error::InvalidParameter(
            "number of interactive factors must be positive".into(),
        ));
    }
    reconstruct_quadratic(panel, &SpectralConfig::interactive(n_factors).backend(backend))
}

/// Cut-off for counting non-negligible eigenvalues of `A^0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// `||A^0||_2 * min(N, T)^(-exponent)`.
    PowerDecay { exponent: f64 },
    Absolute(f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::PowerDecay {
            exponent: 1.0 / 3.0,
        }
    }
}

/// Estimate of the product `GM` from the number of eigenvalues of `A^0`
/// exceeding the threshold: `max(ceil((count - 2) / 2), 1)`.
pub fn estimate_gm_product(panel: &BalancedPanel, rule: ThresholdRule) -> Result<usize> {
    let op = ResidualDifferenceOperator::new(panel, &vec![0.0; panel.n_covariates()])?;
    let values = dense_eigenvalues(&op)?;
    let norm = values.first().map_or(0.0, |v| v.abs());
    let tau = match rule {
        ThresholdRule::PowerDecay { exponent } => {
            let m = panel.n_units().min(panel.n_periods()) as f64;
            norm * m.powf(-exponent)
        }
        ThresholdRule::Absolute(tau) => tau,
    };
    let count = values.iter().filter(|v| v.abs() > tau).count() as i64;
    Ok(((count - 1).div_euclid(2)).max(1) as usize)
}
