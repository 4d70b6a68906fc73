//! Pooled OLS with group-by-period intercepts, given a grouping.
//!
//! Group-time effects are partialled out by demeaning every variable within
//! its (group, period) cell; the slope then comes from OLS on the demeaned
//! data. Standard errors use the unit-clustered sandwich.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::classify::{classify, Classification, ClassifyConfig};
use crate::error::{Error, Result};
use crate::panel::{compensated_sum, BalancedPanel, GroupAssignment};
use crate::rng::RngSpec;

const RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PostSpectralFit {
    pub beta_hat: Vec<f64>,
    /// `G x T` group-time effects.
    pub alpha_hat: DMatrix<f64>,
    pub residuals: DMatrix<f64>,
    /// Demeaned covariate second moment, `(NT)^-1 sum x x'`.
    pub sigma_check: DMatrix<f64>,
    pub omega_hat: DMatrix<f64>,
    pub vcov: DMatrix<f64>,
    pub std_errors: Vec<f64>,
    pub groups_used: GroupAssignment,
}

/// Members of each group in ascending unit order.
fn members(groups: &GroupAssignment) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![Vec::new(); groups.n_groups()];
    for (i, &g) in groups.labels().iter().enumerate() {
        out[g].push(i);
    }
    if let Some(g) = out.iter().position(|m| m.is_empty()) {
        return Err(Error::EmptyGroup(g));
    }
    Ok(out)
}

/// `G x T` matrix of within-cell means of `m`.
fn cell_means(m: &DMatrix<f64>, members: &[Vec<usize>]) -> DMatrix<f64> {
    let t = m.ncols();
    DMatrix::from_fn(members.len(), t, |g, s| {
        compensated_sum(members[g].iter().map(|&i| m[(i, s)])) / members[g].len() as f64
    })
}

fn demean(m: &DMatrix<f64>, groups: &GroupAssignment, means: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, s| m[(i, s)] - means[(groups.labels()[i], s)])
}

/// Demeaned covariates, one `N x T` matrix each.
pub fn within_cell_demean(panel: &BalancedPanel, groups: &GroupAssignment) -> Result<Vec<DMatrix<f64>>> {
    check_groups(panel, groups)?;
    let members = members(groups)?;
    Ok(panel
        .covariates()
        .iter()
        .map(|x| demean(x, groups, &cell_means(x, &members)))
        .collect())
}

fn check_groups(panel: &BalancedPanel, groups: &GroupAssignment) -> Result<()> {
    if groups.n_units() != panel.n_units() {
        return Err(Error::DimensionMismatch {
            expected: panel.n_units(),
            got: groups.n_units(),
        });
    }
    Ok(())
}

fn cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    compensated_sum(a.iter().zip(b.iter()).map(|(u, v)| u * v))
}

fn rcond_sym(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let largest = eig.amax();
    if largest == 0.0 || !largest.is_finite() {
        return 0.0;
    }
    eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs())) / largest
}

/// Clustered sandwich from demeaned covariates and residuals.
///
/// Returns `(sigma_check, omega_hat, vcov)` with
/// `sigma_check = (NT)^-1 sum_it x x'`,
/// `omega_hat = (NT)^-1 sum_i (sum_t v x)(sum_t v x)'` and
/// `vcov = sigma_check^-1 omega_hat sigma_check^-1 / (NT)`.
pub fn clustered_sandwich(
    x_check: &[DMatrix<f64>],
    v_hat: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let d = x_check.len();
    let (n, t) = v_hat.shape();
    for x in x_check {
        if x.shape() != (n, t) {
            return Err(Error::DimensionMismatch {
                expected: n * t,
                got: x.len(),
            });
        }
    }
    let nt = (n * t) as f64;
    let sigma = DMatrix::from_fn(d, d, |k, l| cross(&x_check[k], &x_check[l]) / nt);
    let scores: Vec<DVector<f64>> = (0..n)
        .map(|i| {
            DVector::from_fn(d, |k, _| {
                compensated_sum((0..t).map(|s| v_hat[(i, s)] * x_check[k][(i, s)]))
            })
        })
        .collect();
    let omega = DMatrix::from_fn(d, d, |k, l| {
        compensated_sum(scores.iter().map(|u| u[k] * u[l])) / nt
    });
    let rcond = rcond_sym(&sigma);
    if rcond < RCOND_MIN {
        return Err(Error::SingularGram { rcond });
    }
    let inv = sigma
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularGram { rcond })?;
    let mut vcov = &inv * &omega * &inv / nt;
    vcov = (&vcov + vcov.transpose()) * 0.5;
    Ok((sigma, omega, vcov))
}

/// Pooled OLS with one intercept per (group, period) cell.
pub fn pooled_ols(panel: &BalancedPanel, groups: &GroupAssignment) -> Result<PostSpectralFit> {
    check_groups(panel, groups)?;
    let members = members(groups)?;
    let d = panel.n_covariates();
    let x_check: Vec<DMatrix<f64>> = panel
        .covariates()
        .iter()
        .map(|x| demean(x, groups, &cell_means(x, &members)))
        .collect();
    let y_check = demean(panel.y(), groups, &cell_means(panel.y(), &members));

    let beta_hat: Vec<f64> = if d == 0 {
        Vec::new()
    } else {
        let gram = DMatrix::from_fn(d, d, |k, l| cross(&x_check[k], &x_check[l]));
        let xy = DVector::from_fn(d, |k, _| cross(&x_check[k], &y_check));
        let rcond = rcond_sym(&gram);
        if rcond < RCOND_MIN {
            return Err(Error::SingularGram { rcond });
        }
        let sol = gram
            .cholesky()
            .map(|c| c.solve(&xy))
            .ok_or(Error::SingularGram { rcond })?;
        sol.iter().copied().collect()
    };

    let net = panel.residuals(&beta_hat)?;
    let alpha_hat = cell_means(&net, &members);
    let residuals = demean(&net, groups, &alpha_hat);

    let (sigma_check, omega_hat, vcov) = if d == 0 {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    } else {
        clustered_sandwich(&x_check, &residuals)?
    };
    let std_errors = (0..d).map(|k| vcov[(k, k)].max(0.0).sqrt()).collect();
    Ok(PostSpectralFit {
        beta_hat,
        alpha_hat,
        residuals,
        sigma_check,
        omega_hat,
        vcov,
        std_errors,
        groups_used: groups.clone(),
    })
}

/// Pooled OLS under the true grouping.
pub fn oracle_ols(panel: &BalancedPanel, true_groups: &GroupAssignment) -> Result<PostSpectralFit> {
    pooled_ols(panel, true_groups)
}

/// Recomputes the clustered covariance of `fit` from the panel it came from.
pub fn clustered_vcov(fit: &PostSpectralFit, panel: &BalancedPanel) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let x_check = within_cell_demean(panel, &fit.groups_used)?;
    let (_, _, vcov) = clustered_sandwich(&x_check, &fit.residuals)?;
    let se = (0..vcov.nrows()).map(|k| vcov[(k, k)].max(0.0).sqrt()).collect();
    Ok((vcov, se))
}

/// Classification followed by pooled OLS on the estimated groups (however
/// many the classifier returned).
pub fn post_spectral(
    panel: &BalancedPanel,
    n_groups: usize,
    n_factors: usize,
    rng: RngSpec,
    cfg: &ClassifyConfig,
) -> Result<(Classification, PostSpectralFit)> {
    let class = classify(panel, n_groups, n_factors, rng, cfg)?;
    let fit = pooled_ols(panel, &class.g_hat)?;
    Ok((class, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_model_is_recovered() {
        let (n, t) = (12, 5);
        let groups = GroupAssignment::from_labels((0..n).map(|i| i % 3).collect());
        let alpha = DMatrix::from_fn(3, t, |g, s| (g as f64 + 1.0) * (s as f64 - 2.0) + 0.5 * g as f64);
        let x1 = DMatrix::from_fn(n, t, |i, s| ((i * 7 + s * 3) % 11) as f64 - 5.0);
        let x2 = DMatrix::from_fn(n, t, |i, s| ((i * 5 + s * s) % 7) as f64 * 0.3);
        let y = DMatrix::from_fn(n, t, |i, s| {
            -x1[(i, s)] + 0.8 * x2[(i, s)] + alpha[(groups.labels()[i], s)]
        });
        let panel = BalancedPanel::from_arrays(y, vec![x1, x2]).unwrap();
        let fit = pooled_ols(&panel, &groups).unwrap();
        assert!((fit.beta_hat[0] + 1.0).abs() < 1e-10);
        assert!((fit.beta_hat[1] - 0.8).abs() < 1e-10);
        assert!((&fit.alpha_hat - &alpha).amax() < 1e-10);
        assert!(fit.residuals.amax() < 1e-10);
        assert!(fit.vcov.amax() < 1e-18);
    }

    #[test]
    fn single_unit_cluster_by_hand() {
        let x = vec![DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5])];
        let v = DMatrix::from_row_slice(1, 3, &[0.3, 0.1, -0.4]);
        let (sigma, omega, vcov) = clustered_sandwich(&x, &v).unwrap();
        let score: f64 = 0.3 * 1.0 + 0.1 * -2.0 + -0.4 * 0.5;
        let sxx: f64 = (1.0 + 4.0 + 0.25) / 3.0;
        assert!((omega[(0, 0)] - score * score / 3.0).abs() < 1e-15);
        assert!((sigma[(0, 0)] - sxx).abs() < 1e-15);
        let expect = omega[(0, 0)] / (sxx * sxx) / 3.0;
        assert!((vcov[(0, 0)] - expect).abs() < 1e-15);
    }

    #[test]
    fn empty_group_and_collinearity_errors() {
        let y = DMatrix::from_fn(4, 3, |i, s| (i + s) as f64);
        let x = DMatrix::from_fn(4, 3, |i, s| (i * s) as f64);
        let panel = BalancedPanel::from_arrays(y.clone(), vec![x]).unwrap();
        let groups = GroupAssignment::new(vec![0, 0, 2, 2], 3).unwrap();
        assert!(matches!(pooled_ols(&panel, &groups), Err(Error::EmptyGroup(1))));
        // covariate constant within cells demeans to zero
        let x = DMatrix::from_fn(4, 3, |_, s| s as f64);
        let panel = BalancedPanel::from_arrays(y, vec![x]).unwrap();
        let groups = GroupAssignment::from_labels(vec![0, 0, 1, 1]);
        assert!(matches!(pooled_ols(&panel, &groups), Err(Error::SingularGram { .. })));
    }

    #[test]
    fn single_group_is_period_demeaned_ols() {
        let (n, t) = (6, 4);
        let x = DMatrix::from_fn(n, t, |i, s| ((i * 3 + s * 5) % 7) as f64);
        let y = DMatrix::from_fn(n, t, |i, s| ((i + 2 * s) % 5) as f64 + 0.5 * x[(i, s)]);
        let panel = BalancedPanel::from_arrays(y.clone(), vec![x.clone()]).unwrap();
        let fit = pooled_ols(&panel, &GroupAssignment::from_labels(vec![0; n])).unwrap();
        let xm = DMatrix::from_fn(n, t, |i, s| x[(i, s)] - x.column(s).mean());
        let ym = DMatrix::from_fn(n, t, |i, s| y[(i, s)] - y.column(s).mean());
        let b = xm.dot(&ym) / xm.dot(&xm);
        assert!((fit.beta_hat[0] - b).abs() < 1e-12);
    }
}
