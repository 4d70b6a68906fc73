//! Cross-fitted spectral classification of units into groups.
//!
//! Units are split at random into two halves. Each half yields a spectral
//! slope estimate and a `T x G` basis for the span of the group effects;
//! every unit's residual path is projected onto the basis estimated from the
//! *other* half, and the projected vectors are clustered by a greedy
//! threshold rule whose threshold is the smallest one producing at most `G`
//! groups.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::eigsolve::EigBackend;
use crate::error::{Error, Result};
use crate::panel::{BalancedPanel, GroupAssignment};
use crate::rng::RngSpec;
use crate::spectral::{reconstruct_quadratic, SpectralConfig, SpectralFit};

const SPLIT_RETRIES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    /// `h[i]` in `{0, 1}`.
    pub h: Vec<u8>,
    /// Units with `h = 1`.
    pub i0: Vec<usize>,
    /// Units with `h = 0`.
    pub i1: Vec<usize>,
    pub rng: RngSpec,
}

impl SplitPlan {
    pub fn from_labels(h: Vec<u8>, rng: RngSpec) -> Result<Self> {
        if h.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("split labels must be 0 or 1".into()));
        }
        let i0: Vec<usize> = (0..h.len()).filter(|&i| h[i] == 1).collect();
        let i1: Vec<usize> = (0..h.len()).filter(|&i| h[i] == 0).collect();
        if i0.is_empty() || i1.is_empty() {
            return Err(Error::DegenerateSplit { attempts: 1 });
        }
        Ok(Self { h, i0, i1, rng })
    }

    /// Members of subsample `I_half`.
    pub fn half(&self, half: usize) -> &[usize] {
        if half == 0 {
            &self.i0
        } else {
            &self.i1
        }
    }
}

/// Fair coin per unit; redrawn on a fresh substream while either half is
/// empty.
pub fn make_split(n_units: usize, rng: RngSpec) -> Result<SplitPlan> {
    for attempt in 0..=SPLIT_RETRIES {
        let spec = rng.derive(attempt as u64);
        let mut gen = spec.rng();
        let h: Vec<u8> = (0..n_units).map(|_| gen.random::<bool>() as u8).collect();
        if h.contains(&0) && h.contains(&1) {
            return SplitPlan::from_labels(h, spec);
        }
    }
    Err(Error::DegenerateSplit {
        attempts: SPLIT_RETRIES + 1,
    })
}

/// How the threshold `lambda_hat` is located.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaSearch {
    /// Walks the exact breakpoints of the greedy pass upward from zero.
    #[default]
    Exact,
    /// Scans sorted pairwise distances and bisects between the first
    /// accepted candidate and its predecessor.
    PairwiseBisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassifyConfig {
    pub backend: EigBackend,
    pub lambda_search: LambdaSearch,
    /// Eigenvalue count for the per-half spectral fits; `2GM + 2` if unset.
    pub k_eigs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Projection {
    /// Row `i` is `A_i`.
    pub a_hat: DMatrix<f64>,
    /// `F_0`, `F_1`, estimated from `I_0` and `I_1` respectively.
    pub f_hat_mats: [DMatrix<f64>; 2],
    pub beta_halves: [Vec<f64>; 2],
    pub half_fits: [SpectralFit; 2],
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub g_hat: GroupAssignment,
    pub lambda_hat: f64,
    pub a_hat: DMatrix<f64>,
    pub f_hat_mats: [DMatrix<f64>; 2],
    pub beta_halves: [Vec<f64>; 2],
    /// Thresholds visited by the search with the group count found there.
    /// Passes that stop early once the count exceeds `G` report `G + 1`.
    pub m_curve: Vec<(f64, usize)>,
    pub split: SplitPlan,
}

impl Classification {
    pub fn n_groups(&self) -> usize {
        self.g_hat.n_groups()
    }

    /// `unit_id,h_i,g_hat` with one-based groups.
    pub fn write_csv<W: Write>(&self, unit_ids: &[String], writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["unit_id", "h_i", "g_hat"])?;
        for (i, unit) in unit_ids.iter().enumerate() {
            wtr.write_record([
                unit.clone(),
                self.split.h[i].to_string(),
                (self.g_hat.labels()[i] + 1).to_string(),
            ])?;
        }
        wtr.flush().map_err(|source| Error::Io {
            path: "<writer>".into(),
            source,
        })
    }
}

/// Orthonormal eigenvectors of the `g` largest eigenvalues, each signed so
/// its first nonzero entry is positive.
pub fn top_eigenvectors(b: &DMatrix<f64>, g: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(b.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let mut f = DMatrix::zeros(b.nrows(), g);
    for (col, &idx) in order.iter().take(g).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let tol = v.amax() * f64::EPSILON;
        if let Some(first) = v.iter().find(|x| x.abs() > tol) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        f.set_column(col, &v);
    }
    f
}

/// Per-half spectral fits, bases `F_h`, and cross-fitted projections `A_i`.
pub fn projected_vectors(
    panel: &BalancedPanel,
    split: &SplitPlan,
    n_groups: usize,
    n_factors: usize,
    cfg: &ClassifyConfig,
) -> Result<Projection> {
    let (n, t) = (panel.n_units(), panel.n_periods());
    if n_groups == 0 || n_factors == 0 {
        return Err(Error::InvalidParameter(
            "number of groups and of covariate factors must be positive".into(),
        ));
    }
    if t < n_groups {
        return Err(Error::TSmallerThanG {
            periods: t,
            groups: n_groups,
        });
    }
    if split.h.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: split.h.len(),
        });
    }
    let k = cfg.k_eigs.unwrap_or(2 * n_groups * n_factors + 2);
    let fit_half = |half: usize| -> Result<(SpectralFit, DMatrix<f64>)> {
        let sub = panel.select_units(split.half(half));
        let spectral = SpectralConfig::with_k(k)
            .backend(cfg.backend)
            .rng(split.rng.derive(0x5EC7 + half as u64));
        let fit = reconstruct_quadratic(&sub, &spectral)?;
        let r = sub.residuals(&fit.beta_tilde)?;
        let b = r.transpose() * &r * (2.0 / (n as f64 * t as f64));
        Ok((fit, top_eigenvectors(&b, n_groups)))
    };
    let (half0, half1) = rayon::join(|| fit_half(0), || fit_half(1));
    let (fit0, f0) = half0?;
    let (fit1, f1) = half1?;

    let residuals = [panel.residuals(&fit0.beta_tilde)?, panel.residuals(&fit1.beta_tilde)?];
    let projectors = [&f0 * f0.transpose(), &f1 * f1.transpose()];
    let mut a_hat = DMatrix::zeros(n, t);
    for i in 0..n {
        let h = split.h[i] as usize;
        let r: DVector<f64> = residuals[h].row(i).transpose();
        let a = &projectors[h] * r;
        a_hat.set_row(i, &a.transpose());
    }
    Ok(Projection {
        a_hat,
        beta_halves: [fit0.beta_tilde.clone(), fit1.beta_tilde.clone()],
        f_hat_mats: [f0, f1],
        half_fits: [fit0, fit1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPass {
    pub labels: Vec<usize>,
    pub n_groups: usize,
    /// False when the pass stopped early on exceeding the group cap.
    pub complete: bool,
    /// Smallest distance among membership tests that failed. The grouping is
    /// unchanged for every threshold in `[lambda, min_failed)`.
    pub min_failed: f64,
}

/// One greedy pass: units in index order join the lowest-indexed group whose
/// running mean lies within `lambda`, otherwise open a new group. Stops once
/// more than `cap` groups exist.
pub fn greedy_pass(a_hat: &DMatrix<f64>, lambda: f64, cap: Option<usize>) -> GreedyPass {
    let (n, t) = a_hat.shape();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut labels = Vec::with_capacity(n);
    let mut min_failed = f64::INFINITY;
    let mut mean = vec![0.0; t];
    for i in 0..n {
        let mut joined = None;
        for (g, sum) in sums.iter().enumerate() {
            let c = counts[g] as f64;
            for (m, s) in mean.iter_mut().zip(sum) {
                *m = s / c;
            }
            let dist = (0..t)
                .map(|s| {
                    let d = a_hat[(i, s)] - mean[s];
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            if dist <= lambda {
                joined = Some(g);
                break;
            }
            min_failed = min_failed.min(dist);
        }
        let g = match joined {
            Some(g) => g,
            None => {
                sums.push(vec![0.0; t]);
                counts.push(0);
                sums.len() - 1
            }
        };
        for (s, v) in sums[g].iter_mut().zip(a_hat.row(i).iter()) {
            *s += v;
        }
        counts[g] += 1;
        labels.push(g);
        if cap.is_some_and(|c| sums.len() > c) {
            return GreedyPass {
                labels,
                n_groups: sums.len(),
                complete: false,
                min_failed,
            };
        }
    }
    GreedyPass {
        labels,
        n_groups: sums.len(),
        complete: true,
        min_failed,
    }
}

/// Full greedy partition at threshold `lambda`, with its group count.
pub fn run_classification_algorithm(a_hat: &DMatrix<f64>, lambda: f64) -> (GroupAssignment, usize) {
    let pass = greedy_pass(a_hat, lambda, None);
    let m = pass.n_groups;
    (GroupAssignment::from_labels(pass.labels), m)
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda_hat: f64,
    pub groups: GroupAssignment,
    pub m_curve: Vec<(f64, usize)>,
}

/// Smallest threshold whose greedy partition has at most `G` groups.
pub fn find_lambda_hat(a_hat: &DMatrix<f64>, n_groups: usize, search: LambdaSearch) -> Result<LambdaSelection> {
    if n_groups == 0 {
        return Err(Error::InvalidParameter("number of groups must be positive".into()));
    }
    if a_hat.nrows() == 0 {
        return Ok(LambdaSelection {
            lambda_hat: 0.0,
            groups: GroupAssignment::from_labels(Vec::new()),
            m_curve: Vec::new(),
        });
    }
    match search {
        LambdaSearch::Exact => Ok(exact_search(a_hat, n_groups)),
        LambdaSearch::PairwiseBisection => Ok(pairwise_bisection(a_hat, n_groups)),
    }
}

fn exact_search(a_hat: &DMatrix<f64>, n_groups: usize) -> LambdaSelection {
    let mut lambda = 0.0;
    let mut m_curve = Vec::new();
    loop {
        let pass = greedy_pass(a_hat, lambda, Some(n_groups));
        m_curve.push((lambda, pass.n_groups));
        if pass.complete {
            return LambdaSelection {
                lambda_hat: lambda,
                groups: GroupAssignment::from_labels(pass.labels),
                m_curve,
            };
        }
        // An incomplete pass opened a group, so some test failed.
        lambda = pass.min_failed;
    }
}

fn pairwise_distances(a_hat: &DMatrix<f64>) -> Vec<f64> {
    let n = a_hat.nrows();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push((a_hat.row(i) - a_hat.row(j)).norm());
        }
    }
    d
}

fn pairwise_bisection(a_hat: &DMatrix<f64>, n_groups: usize) -> LambdaSelection {
    let mut candidates = pairwise_distances(a_hat);
    candidates.push(0.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let max_dist = *candidates.last().unwrap();
    let tol = 1e-9 * max_dist;
    let mut m_curve = Vec::new();
    let accepts = |lambda: f64, curve: &mut Vec<(f64, usize)>| {
        let pass = greedy_pass(a_hat, lambda, Some(n_groups));
        curve.push((lambda, pass.n_groups));
        pass.complete
    };
    // A threshold at or beyond the largest pairwise distance merges every unit
    // into the first group, so the scan always ends.
    let mut hit = candidates.len() - 1;
    for (idx, &c) in candidates.iter().enumerate() {
        if accepts(c, &mut m_curve) {
            hit = idx;
            break;
        }
    }
    let mut hi = candidates[hit];
    if hit > 0 {
        let mut lo = candidates[hit - 1];
        while hi - lo > tol {
            let mid = lo + (hi - lo) / 2.0;
            if mid <= lo || mid >= hi {
                break;
            }
            if accepts(mid, &mut m_curve) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    let (groups, _) = run_classification_algorithm(a_hat, hi);
    LambdaSelection {
        lambda_hat: hi,
        groups,
        m_curve,
    }
}

/// Split, project, and cluster.
pub fn classify(
    panel: &BalancedPanel,
    n_groups: usize,
    n_factors: usize,
    rng: RngSpec,
    cfg: &ClassifyConfig,
) -> Result<Classification> {
    let split = make_split(panel.n_units(), rng.derive(1))?;
    classify_with_split(panel, n_groups, n_factors, split, cfg)
}

pub fn classify_with_split(
    panel: &BalancedPanel,
    n_groups: usize,
    n_factors: usize,
    split: SplitPlan,
    cfg: &ClassifyConfig,
) -> Result<Classification> {
    let proj = projected_vectors(panel, &split, n_groups, n_factors, cfg)?;
    let sel = find_lambda_hat(&proj.a_hat, n_groups, cfg.lambda_search)?;
    Ok(Classification {
        g_hat: sel.groups,
        lambda_hat: sel.lambda_hat,
        a_hat: proj.a_hat,
        f_hat_mats: proj.f_hat_mats,
        beta_halves: proj.beta_halves,
        m_curve: sel.m_curve,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(data: &[&[f64]]) -> DMatrix<f64> {
        let t = data[0].len();
        DMatrix::from_fn(data.len(), t, |i, j| data[i][j])
    }

    #[test]
    fn hand_checked_greedy() {
        let a = rows(&[&[0.0, 0.0], &[0.0, 0.0], &[10.0, 10.0]]);
        let (g, m) = run_classification_algorithm(&a, 1.0);
        assert_eq!(m, 2);
        assert_eq!(g.labels(), &[0, 0, 1]);
    }

    #[test]
    fn zero_threshold_distinct_rows_are_singletons() {
        let a = DMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64);
        let (g, m) = run_classification_algorithm(&a, 0.0);
        assert_eq!(m, 6);
        assert_eq!(g.labels(), &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn running_mean_drifts() {
        // 0 founds, 1.5 joins (mean 0.75), 3 is within 2.25 of 0.75
        let a = rows(&[&[0.0], &[1.5], &[3.0]]);
        let (g, _) = run_classification_algorithm(&a, 2.0);
        assert_eq!(g.labels(), &[0, 0, 1]);
        let (g, _) = run_classification_algorithm(&a, 2.25);
        assert_eq!(g.labels(), &[0, 0, 0]);
    }

    #[test]
    fn lowest_index_group_wins_ties() {
        let a = rows(&[&[0.0], &[4.0], &[2.0]]);
        let (g, m) = run_classification_algorithm(&a, 2.0);
        assert_eq!((g.labels(), m), (&[0usize, 1, 0][..], 2));
    }

    #[test]
    fn two_clusters_threshold() {
        let a = rows(&[&[0.0, 0.0], &[0.1, 0.0], &[10.0, 0.0], &[10.0, 0.1], &[0.0, 0.1]]);
        for search in [LambdaSearch::Exact, LambdaSearch::PairwiseBisection] {
            let sel = find_lambda_hat(&a, 2, search).unwrap();
            assert_eq!(sel.groups.labels(), &[0, 0, 1, 1, 0]);
            assert!(sel.lambda_hat > 0.0 && sel.lambda_hat < 10.0);
        }
        let exact = find_lambda_hat(&a, 2, LambdaSearch::Exact).unwrap();
        // at 0.1 units 0 and 1 merge (mean (0.05, 0)) and unit 4 misses that
        // mean by sqrt(0.05^2 + 0.1^2)
        assert!((exact.lambda_hat - 0.0125f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_rows_need_no_threshold() {
        let a = DMatrix::from_element(4, 3, 1.5);
        let sel = find_lambda_hat(&a, 1, LambdaSearch::Exact).unwrap();
        assert_eq!(sel.lambda_hat, 0.0);
        assert_eq!(sel.groups.n_groups(), 1);
    }

    #[test]
    fn split_is_deterministic_and_nonempty() {
        let a = make_split(50, RngSpec::new(3, 0)).unwrap();
        let b = make_split(50, RngSpec::new(3, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.i0.len() + a.i1.len(), 50);
        for seed in 0..20 {
            let s = make_split(2, RngSpec::new(seed, 0)).unwrap();
            assert_eq!((s.i0.len(), s.i1.len()), (1, 1));
        }
        assert!(matches!(
            make_split(1, RngSpec::new(0, 0)),
            Err(Error::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn eigenvector_signs_fixed() {
        let b = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let f = top_eigenvectors(&b, 2);
        assert_eq!(f.column(0).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(f.column(1).as_slice(), &[1.0, 0.0, 0.0]);
    }
}
