//! Models with a lagged outcome among the regressors.
//!
//! The lag enters as an extra covariate whose systematic part is itself a
//! combination of group effects, so the static estimators apply to the
//! augmented panel with the number of covariate factors doubled.

use log::warn;

use crate::classify::{Classification, ClassifyConfig};
use crate::eigsolve::EigBackend;
use crate::error::{Error, Result};
use crate::panel::BalancedPanel;
use crate::postspectral::{post_spectral, PostSpectralFit};
use crate::rng::RngSpec;
use crate::spectral::{reconstruct_quadratic, SpectralConfig, SpectralFit};

pub const LAG_NAME: &str = "y_lag1";

#[derive(Debug, Clone)]
pub enum DynamicInner {
    Spectral(SpectralFit),
    PostSpectral(Box<(Classification, PostSpectralFit)>),
}

#[derive(Debug, Clone)]
pub struct DynamicFit {
    /// Coefficient on the lagged outcome.
    pub theta_hat: f64,
    pub beta_hat: Vec<f64>,
    pub inner: DynamicInner,
    /// Periods used after dropping the first.
    pub effective_t: usize,
}

/// Drops the first period and prepends `y_{t-1}` as covariate 0.
pub fn augment_panel(panel: &BalancedPanel) -> Result<BalancedPanel> {
    let t = panel.n_periods();
    if t < 3 {
        return Err(Error::TooFewPeriods(t));
    }
    let lag = panel.y().columns(0, t - 1).into_owned();
    panel.select_periods(1, t - 1).with_covariate(0, LAG_NAME, lag)
}

/// Eigenvalue count used on the augmented panel, `2G(2M) + 2`.
pub fn dynamic_k_eigs(n_groups: usize, n_factors: usize) -> usize {
    2 * n_groups * (2 * n_factors) + 2
}

fn split_coefficients(coef: &[f64]) -> (f64, Vec<f64>) {
    let theta = coef[0];
    if theta.abs() >= 1.0 {
        warn!("estimated autoregressive coefficient {theta:.4} is outside (-1, 1)");
    }
    (theta, coef[1..].to_vec())
}

pub fn dynamic_spectral(
    panel: &BalancedPanel,
    n_groups: usize,
    n_factors: usize,
    backend: EigBackend,
) -> Result<DynamicFit> {
    if n_groups == 0 || n_factors == 0 {
        return Err(Error::InvalidParameter(
            "number of groups and of covariate factors must be positive".into(),
        ));
    }
    let aug = augment_panel(panel)?;
    let cfg = SpectralConfig::grouped(n_groups, 2 * n_factors).backend(backend);
    debug_assert_eq!(cfg.k_eigs, dynamic_k_eigs(n_groups, n_factors));
    let fit = reconstruct_quadratic(&aug, &cfg)?;
    let (theta_hat, beta_hat) = split_coefficients(&fit.beta_tilde);
    Ok(DynamicFit {
        theta_hat,
        beta_hat,
        inner: DynamicInner::Spectral(fit),
        effective_t: aug.n_periods(),
    })
}

pub fn dynamic_post_spectral(
    panel: &BalancedPanel,
    n_groups: usize,
    n_factors: usize,
    rng: RngSpec,
    cfg: &ClassifyConfig,
) -> Result<DynamicFit> {
    let aug = augment_panel(panel)?;
    let (class, fit) = post_spectral(&aug, n_groups, 2 * n_factors, rng, cfg)?;
    let (theta_hat, beta_hat) = split_coefficients(&fit.beta_hat);
    Ok(DynamicFit {
        theta_hat,
        beta_hat,
        inner: DynamicInner::PostSpectral(Box::new((class, fit))),
        effective_t: aug.n_periods(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn panel(t: usize) -> BalancedPanel {
        let y = DMatrix::from_fn(3, t, |i, s| (10 * i + s) as f64);
        let x = DMatrix::from_fn(3, t, |i, s| (i as f64) - 0.5 * s as f64);
        BalancedPanel::from_arrays(y, vec![x]).unwrap()
    }

    #[test]
    fn lag_bookkeeping() {
        let p = panel(3);
        let a = augment_panel(&p).unwrap();
        assert_eq!(a.n_periods(), 2);
        assert_eq!(a.n_covariates(), 2);
        assert_eq!(a.covariate_names()[0], LAG_NAME);
        for i in 0..3 {
            assert_eq!(a.x(0)[(i, 0)], p.y()[(i, 0)]);
            assert_eq!(a.x(0)[(i, 1)], p.y()[(i, 1)]);
            assert_eq!(a.y()[(i, 0)], p.y()[(i, 1)]);
        }
        assert_eq!(a.period_ids(), &p.period_ids()[1..]);
    }

    #[test]
    fn stripping_the_lag_round_trips() {
        let p = panel(6);
        let stripped = augment_panel(&p).unwrap().without_covariate(0);
        assert_eq!(stripped, p.select_periods(1, 5));
    }

    #[test]
    fn two_periods_rejected() {
        assert!(matches!(augment_panel(&panel(2)), Err(Error::TooFewPeriods(2))));
        assert!(matches!(
            dynamic_spectral(&panel(2), 1, 1, EigBackend::Dense),
            Err(Error::TooFewPeriods(2))
        ));
    }

    #[test]
    fn eigen_count() {
        assert_eq!(dynamic_k_eigs(2, 1), 10);
        assert_eq!(dynamic_k_eigs(7, 2), 58);
        assert_eq!(SpectralConfig::grouped(3, 2 * 2).k_eigs, dynamic_k_eigs(3, 2));
    }
}
