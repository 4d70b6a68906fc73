//! Monte Carlo designs, replication driver and result tables.
//!
//! Every replication `r` of a design draws from its own stream `(seed, r)`,
//! so a table does not depend on how replications are scheduled.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use itertools::Itertools;
use nalgebra::DMatrix;
use pathfinding::prelude::{kuhn_munkres, Matrix};
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::classify::ClassifyConfig;
use crate::dynamic::{augment_panel, dynamic_post_spectral, dynamic_spectral, DynamicInner};
use crate::eigsolve::EigBackend;
use crate::error::{Error, Result};
use crate::panel::{BalancedPanel, GroupAssignment};
use crate::postspectral::{oracle_ols, pooled_ols, post_spectral};
use crate::rng::{RngSpec, TruncatedNormal};
use crate::spectral::spectral_estimate;

#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub n: usize,
    pub t: usize,
    pub g: usize,
    pub m: usize,
    pub sigma2: f64,
    pub varrho: f64,
    pub trunc: f64,
    pub beta: Vec<f64>,
    pub n_reps: usize,
    pub seed: u64,
    /// Coefficient on `y_{t-1}` in the outcome equation; `None` for a
    /// static design.
    pub theta: Option<f64>,
    /// Multiplies the idiosyncratic outcome error; 0 gives noiseless outcomes.
    pub v_scale: f64,
    /// Multiplies the idiosyncratic covariate component.
    pub z_scale: f64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            n: 100,
            t: 20,
            g: 2,
            m: 1,
            sigma2: 1.0,
            varrho: 3.0,
            trunc: 20.0,
            beta: vec![-1.0, 0.8],
            n_reps: 50,
            seed: 0,
            theta: None,
            v_scale: 1.0,
            z_scale: 1.0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n == 0 || self.t == 0 || self.g == 0 || self.m == 0 {
            return bad("N, T, G and M must be positive".into());
        }
        if self.n < self.g {
            return bad(format!("N = {} is smaller than G = {}", self.n, self.g));
        }
        if self.beta.is_empty() {
            return bad("at least one slope coefficient is required".into());
        }
        if self.beta.iter().chain([self.varrho, self.v_scale, self.z_scale].iter()).any(|v| !v.is_finite()) {
            return bad("design parameters must be finite".into());
        }
        if let Some(theta) = self.theta {
            if !theta.is_finite() || theta.abs() >= 1.0 {
                return bad(format!("theta must lie in (-1, 1), got {theta}"));
            }
        }
        TruncatedNormal::new(self.sigma2, self.trunc)?;
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.beta.len()
    }
}

/// Unobserved quantities behind a generated panel.
#[derive(Debug, Clone)]
pub struct DgpParams {
    /// `alpha[m]` is the `G x T` matrix of effects for factor `m`; the
    /// outcome uses `alpha[0]`.
    pub alpha: Vec<DMatrix<f64>>,
    /// `loadings[m]` is `N x d`.
    pub loadings: Vec<DMatrix<f64>>,
    pub beta: Vec<f64>,
    pub theta: Option<f64>,
}

/// Equal group sizes `floor(N / G)`, remainder to the last group.
pub fn equal_groups(n: usize, g: usize) -> GroupAssignment {
    let size = n / g;
    GroupAssignment::from_labels((0..n).map(|i| (i / size).min(g - 1)).collect())
}

/// Draws a panel from the design. Independent substreams feed the group
/// effects, the loadings, the covariate noise and the outcome noise.
pub fn generate_dgp(cfg: &DgpConfig, rng: RngSpec) -> Result<(BalancedPanel, GroupAssignment, DgpParams)> {
    cfg.validate()?;
    let (n, t, g, m, d) = (cfg.n, cfg.t, cfg.g, cfg.m, cfg.d());
    let alpha_law = TruncatedNormal::new(cfg.sigma2, cfg.trunc)?;
    let unit_law = TruncatedNormal::new(1.0, cfg.trunc)?;

    let mut gen = rng.derive(1).rng();
    let alpha: Vec<DMatrix<f64>> = (0..m)
        .map(|_| {
            let mut a = DMatrix::zeros(g, t);
            for gi in 0..g {
                for s in 0..t {
                    a[(gi, s)] = alpha_law.sample(&mut gen);
                }
            }
            a
        })
        .collect();

    let mut gen = rng.derive(2).rng();
    let mut loadings: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, d); m];
    for i in 0..n {
        for (f, load) in loadings.iter_mut().enumerate() {
            for k in 0..d {
                let z = unit_law.sample(&mut gen);
                load[(i, k)] = z + loading_shift(f, k, cfg.varrho);
            }
        }
    }

    let groups = equal_groups(n, g);
    let labels = groups.labels();
    let mut gen = rng.derive(3).rng();
    let mut x: Vec<DMatrix<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let mut xk = DMatrix::zeros(n, t);
        for i in 0..n {
            for s in 0..t {
                let z = unit_law.sample(&mut gen) * cfg.z_scale;
                let systematic: f64 = (0..m).map(|f| loadings[f][(i, k)] * alpha[f][(labels[i], s)]).sum();
                xk[(i, s)] = systematic + z;
            }
        }
        x.push(xk);
    }

    let mut gen = rng.derive(4).rng();
    let theta = cfg.theta.unwrap_or(0.0);
    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        let mut prev = 0.0;
        for s in 0..t {
            let v = unit_law.sample(&mut gen) * cfg.v_scale;
            let xb: f64 = (0..d).map(|k| x[k][(i, s)] * cfg.beta[k]).sum();
            let val = theta * prev + xb + alpha[0][(labels[i], s)] + v;
            y[(i, s)] = val;
            prev = val;
        }
    }
    let panel = BalancedPanel::from_arrays(y, x)?;
    Ok((
        panel,
        groups,
        DgpParams {
            alpha,
            loadings,
            beta: cfg.beta.clone(),
            theta: cfg.theta,
        },
    ))
}

/// Nonrandom part of loading `(factor, covariate)`. With one factor every
/// covariate loads `varrho`; with two, the first factor loads `varrho` and
/// the second loads 1 on the first covariate and 0 elsewhere.
fn loading_shift(factor: usize, covariate: usize, varrho: f64) -> f64 {
    match (factor, covariate) {
        (0, _) => varrho,
        (1, 0) => 1.0,
        _ => 0.0,
    }
}

const ENUMERATION_MAX: usize = 8;

/// Share of units whose estimated label differs from the truth under the
/// best one-to-one matching of labels.
pub fn misclassification_rate(g_hat: &GroupAssignment, g_true: &GroupAssignment) -> Result<f64> {
    if g_hat.n_units() != g_true.n_units() {
        return Err(Error::DimensionMismatch {
            expected: g_true.n_units(),
            got: g_hat.n_units(),
        });
    }
    let n = g_true.n_units();
    if n == 0 {
        return Ok(0.0);
    }
    let k = g_hat.n_groups().max(g_true.n_groups());
    let mut confusion = vec![vec![0i64; k]; k];
    for (&a, &b) in g_hat.labels().iter().zip(g_true.labels()) {
        confusion[a][b] += 1;
    }
    let matched = if k <= ENUMERATION_MAX {
        best_matching_enumerated(&confusion)
    } else {
        best_matching_hungarian(&confusion)
    };
    Ok(1.0 - matched as f64 / n as f64)
}

pub fn best_matching_enumerated(confusion: &[Vec<i64>]) -> i64 {
    let k = confusion.len();
    (0..k)
        .permutations(k)
        .map(|p| (0..k).map(|a| confusion[a][p[a]]).sum::<i64>())
        .max()
        .unwrap_or(0)
}

pub fn best_matching_hungarian(confusion: &[Vec<i64>]) -> i64 {
    if confusion.is_empty() {
        return 0;
    }
    let weights = Matrix::from_rows(confusion.iter().cloned()).expect("square confusion matrix");
    kuhn_munkres(&weights).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Spectral,
    PostSpectral,
    Oracle,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Spectral, Estimator::PostSpectral, Estimator::Oracle];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Spectral => "S",
            Estimator::PostSpectral => "P-S",
            Estimator::Oracle => "Oracle",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" | "spectral" => Ok(Estimator::Spectral),
            "p-s" | "ps" | "post-spectral" => Ok(Estimator::PostSpectral),
            "oracle" => Ok(Estimator::Oracle),
            other => Err(Error::Config(format!("unknown estimator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub estimators: Vec<Estimator>,
    pub classify: ClassifyConfig,
    /// Spectral step of the S column.
    pub backend: EigBackend,
    /// Route estimation through the lagged-outcome model.
    pub dynamic: bool,
    /// Worker count; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            estimators: Estimator::ALL.to_vec(),
            classify: ClassifyConfig::default(),
            backend: EigBackend::default(),
            dynamic: false,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub generate: Duration,
    pub spectral: Duration,
    pub post_spectral: Duration,
    pub oracle: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub rep_index: usize,
    /// True coefficients the estimates are compared with (`theta` first in
    /// the dynamic route).
    pub truth: Vec<f64>,
    pub beta_tilde: Option<Vec<f64>>,
    pub beta_hat_ps: Option<Vec<f64>>,
    pub beta_hat_oracle: Option<Vec<f64>>,
    pub misclass_s: Option<f64>,
    pub n_groups_hat: Option<usize>,
    /// First estimator error, if any; such replications are left out of
    /// the averages.
    pub failure: Option<String>,
    pub wall_time: StageTimes,
}

impl ReplicationResult {
    pub fn estimate(&self, e: Estimator) -> Option<&[f64]> {
        match e {
            Estimator::Spectral => self.beta_tilde.as_deref(),
            Estimator::PostSpectral => self.beta_hat_ps.as_deref(),
            Estimator::Oracle => self.beta_hat_oracle.as_deref(),
        }
    }

    /// Mean absolute coefficient error of one estimator.
    pub fn abs_error(&self, e: Estimator) -> Option<f64> {
        self.estimate(e).map(|b| mean_abs_error(b, &self.truth))
    }
}

pub fn mean_abs_error(estimate: &[f64], truth: &[f64]) -> f64 {
    estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64
}

/// Runs one replication of `cfg`.
pub fn run_replication(cfg: &DgpConfig, opts: &SimOptions, rep: usize) -> Result<ReplicationResult> {
    let rng = RngSpec::new(cfg.seed, rep as u64);
    let start = Instant::now();
    let (panel, groups, _) = generate_dgp(cfg, rng.derive(0xD6))?;
    let mut times = StageTimes {
        generate: start.elapsed(),
        ..StageTimes::default()
    };
    let truth: Vec<f64> = if opts.dynamic {
        std::iter::once(cfg.theta.unwrap_or(0.0)).chain(cfg.beta.iter().copied()).collect()
    } else {
        cfg.beta.clone()
    };
    let mut out = ReplicationResult {
        rep_index: rep,
        truth,
        beta_tilde: None,
        beta_hat_ps: None,
        beta_hat_oracle: None,
        misclass_s: None,
        n_groups_hat: None,
        failure: None,
        wall_time: times,
    };
    let (g, m) = (cfg.g, cfg.m);
    let fail = |e: Error, out: &mut ReplicationResult| {
        if out.failure.is_none() {
            out.failure = Some(e.to_string());
        }
    };
    for &est in &opts.estimators {
        let start = Instant::now();
        match est {
            Estimator::Spectral => {
                let res = if opts.dynamic {
                    dynamic_spectral(&panel, g, m, opts.backend).map(|f| coef(f.theta_hat, &f.beta_hat))
                } else {
                    spectral_estimate(&panel, g, m, opts.backend).map(|f| f.beta_tilde)
                };
                match res {
                    Ok(b) => out.beta_tilde = Some(b),
                    Err(e) => fail(e, &mut out),
                }
                times.spectral = start.elapsed();
            }
            Estimator::PostSpectral => {
                let class_rng = rng.derive(0xC1);
                let res = if opts.dynamic {
                    dynamic_post_spectral(&panel, g, m, class_rng, &opts.classify).map(|f| {
                        let DynamicInner::PostSpectral(inner) = &f.inner else {
                            unreachable!("post-spectral route returns a post-spectral fit")
                        };
                        (coef(f.theta_hat, &f.beta_hat), inner.0.g_hat.clone())
                    })
                } else {
                    post_spectral(&panel, g, m, class_rng, &opts.classify).map(|(c, f)| (f.beta_hat, c.g_hat))
                };
                match res.and_then(|(b, g_hat)| Ok((b, misclassification_rate(&g_hat, &groups)?, g_hat.n_groups()))) {
                    Ok((b, rate, m_hat)) => {
                        out.beta_hat_ps = Some(b);
                        out.misclass_s = Some(rate);
                        out.n_groups_hat = Some(m_hat);
                    }
                    Err(e) => fail(e, &mut out),
                }
                times.post_spectral = start.elapsed();
            }
            Estimator::Oracle => {
                let res = if opts.dynamic {
                    augment_panel(&panel).and_then(|aug| oracle_ols(&aug, &groups)).map(|f| f.beta_hat)
                } else {
                    pooled_ols(&panel, &groups).map(|f| f.beta_hat)
                };
                match res {
                    Ok(b) => out.beta_hat_oracle = Some(b),
                    Err(e) => fail(e, &mut out),
                }
                times.oracle = start.elapsed();
            }
        }
    }
    out.wall_time = times;
    Ok(out)
}

fn coef(theta: f64, beta: &[f64]) -> Vec<f64> {
    std::iter::once(theta).chain(beta.iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub g: usize,
    pub t: usize,
    pub n: usize,
    pub mae_s: Option<f64>,
    pub mae_ps: Option<f64>,
    pub mae_oracle: Option<f64>,
    pub misclass_s: Option<f64>,
    pub reps_used: usize,
    pub reps_failed: usize,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub config: DgpConfig,
    pub row: TableRow,
    pub reps: Vec<ReplicationResult>,
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// All replications of one design cell, aggregated. Replications that fail
/// are excluded from every column and counted.
pub fn run_replications(cfg: &DgpConfig, opts: &SimOptions) -> Result<CellResult> {
    cfg.validate()?;
    if cfg.n_reps == 0 {
        return Err(Error::InvalidParameter("at least one replication is required".into()));
    }
    let reps: Vec<ReplicationResult> = with_pool(opts.threads, || {
        (0..cfg.n_reps)
            .into_par_iter()
            .map(|r| run_replication(cfg, opts, r))
            .collect::<Result<Vec<_>>>()
    })??;
    let ok: Vec<&ReplicationResult> = reps.iter().filter(|r| r.failure.is_none()).collect();
    let mean = |f: &dyn Fn(&ReplicationResult) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = ok.iter().map(|r| f(r)).collect();
        vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let row = TableRow {
        g: cfg.g,
        t: cfg.t,
        n: cfg.n,
        mae_s: mean(&|r| r.abs_error(Estimator::Spectral)),
        mae_ps: mean(&|r| r.abs_error(Estimator::PostSpectral)),
        mae_oracle: mean(&|r| r.abs_error(Estimator::Oracle)),
        misclass_s: mean(&|r| r.misclass_s),
        reps_used: ok.len(),
        reps_failed: reps.len() - ok.len(),
    };
    Ok(CellResult {
        config: cfg.clone(),
        row,
        reps,
    })
}

/// `(sigma2, M)` of the standard designs 1 to 4.
pub fn standard_design(table: u8) -> Result<(f64, usize)> {
    match table {
        1 => Ok((1.0, 1)),
        2 => Ok((4.0, 1)),
        3 => Ok((1.0, 2)),
        4 => Ok((4.0, 2)),
        other => Err(Error::InvalidParameter(format!("design table must be 1 to 4, got {other}"))),
    }
}

/// The 18 cells of a standard design: `G` in {2, 7}, then `T` in
/// {20, 50, 100}, then `N` in {100, 200, 400}.
pub fn standard_grid(table: u8, n_reps: usize, seed: u64) -> Result<Vec<DgpConfig>> {
    let (sigma2, m) = standard_design(table)?;
    let mut cells = Vec::with_capacity(18);
    for g in [2, 7] {
        for t in [20, 50, 100] {
            for n in [100, 200, 400] {
                cells.push(DgpConfig {
                    n,
                    t,
                    g,
                    m,
                    sigma2,
                    n_reps,
                    seed,
                    ..DgpConfig::default()
                });
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::InvalidParameter(format!("unknown table format {other:?}"))),
        }
    }
}

pub const TABLE_HEADER: [&str; 9] = ["G", "T", "N", "S", "P-S", "Oracle", "Misclassification S", "reps", "failed"];

fn fmt3(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.3}"))
}

fn row_cells(r: &TableRow) -> Vec<String> {
    vec![
        r.g.to_string(),
        r.t.to_string(),
        r.n.to_string(),
        fmt3(r.mae_s),
        fmt3(r.mae_ps),
        fmt3(r.mae_oracle),
        fmt3(r.misclass_s),
        r.reps_used.to_string(),
        r.reps_failed.to_string(),
    ]
}

/// Summary table with three decimals; `NA` for estimators not run.
pub fn emit_table(rows: &[TableRow], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str(&TABLE_HEADER.join(","));
            out.push('\n');
            for r in rows {
                out.push_str(&row_cells(r).join(","));
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", TABLE_HEADER.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(TABLE_HEADER.len()));
            for r in rows {
                let _ = writeln!(out, "| {} |", row_cells(r).join(" | "));
            }
        }
    }
    out
}

/// One line per replication with full-precision estimates.
pub fn emit_replications_csv(cells: &[CellResult]) -> String {
    let d = cells.iter().map(|c| c.reps.first().map_or(0, |r| r.truth.len())).max().unwrap_or(0);
    let mut header = vec!["G".to_string(), "T".into(), "N".into(), "rep".into()];
    for prefix in ["s", "ps", "oracle"] {
        for k in 1..=d {
            header.push(format!("{prefix}_b{k}"));
        }
    }
    header.extend(["misclass_s".to_string(), "groups_hat".into(), "failure".into()]);
    let mut out = header.join(",");
    out.push('\n');
    let num = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
    for c in cells {
        for r in &c.reps {
            let mut line = vec![
                c.config.g.to_string(),
                c.config.t.to_string(),
                c.config.n.to_string(),
                r.rep_index.to_string(),
            ];
            for e in Estimator::ALL {
                for k in 0..d {
                    line.push(num(r.estimate(e).and_then(|b| b.get(k).copied())));
                }
            }
            line.push(num(r.misclass_s));
            line.push(r.n_groups_hat.map_or_else(|| "NA".to_string(), |m| m.to_string()));
            line.push(
                r.failure
                    .as_deref()
                    .map_or_else(String::new, |f| format!("\"{}\"", f.replace('"', "'"))),
            );
            out.push_str(&line.join(","));
            out.push('\n');
        }
    }
    out
}

/// Designs and options read from a `key = value` experiment file.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub cells: Vec<DgpConfig>,
    pub estimators: Vec<Estimator>,
    pub dynamic: bool,
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        })
        .collect()
}

fn parse_one<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

/// Parses an experiment file. `N`, `T` and `G` accept comma-separated lists
/// and expand to their product in `G, T, N` order; `#` starts a comment.
pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let mut base = DgpConfig::default();
    let (mut ns, mut ts, mut gs) = (vec![base.n], vec![base.t], vec![base.g]);
    let mut estimators = Estimator::ALL.to_vec();
    let mut dynamic = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "N" => ns = parse_list(key, value)?,
            "T" => ts = parse_list(key, value)?,
            "G" => gs = parse_list(key, value)?,
            "M" => base.m = parse_one(key, value)?,
            "sigma2" => base.sigma2 = parse_one(key, value)?,
            "varrho" => base.varrho = parse_one(key, value)?,
            "trunc" => base.trunc = parse_one(key, value)?,
            "beta1" => base.beta[0] = parse_one(key, value)?,
            "beta2" => base.beta[1] = parse_one(key, value)?,
            "reps" => base.n_reps = parse_one(key, value)?,
            "seed" => base.seed = parse_one(key, value)?,
            "estimators" => {
                estimators = value.split(',').map(Estimator::from_str).collect::<Result<_>>()?;
            }
            "dynamic" => dynamic = parse_one(key, value)?,
            "theta" => base.theta = Some(parse_one(key, value)?),
            other => return Err(Error::Config(format!("line {}: unknown key {other:?}", lineno + 1))),
        }
    }
    let mut cells = Vec::new();
    for &g in &gs {
        for &t in &ts {
            for &n in &ns {
                let cell = DgpConfig { n, t, g, ..base.clone() };
                cell.validate().map_err(|e| Error::Config(e.to_string()))?;
                cells.push(cell);
            }
        }
    }
    Ok(ExperimentConfig {
        cells,
        estimators,
        dynamic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_sizes() {
        assert_eq!(equal_groups(100, 2).sizes(), vec![50, 50]);
        assert_eq!(equal_groups(100, 7).sizes(), vec![14, 14, 14, 14, 14, 14, 16]);
        assert_eq!(equal_groups(7, 7).sizes(), vec![1; 7]);
    }

    #[test]
    fn noiseless_outcome_identity() {
        let cfg = DgpConfig {
            n: 30,
            t: 8,
            v_scale: 0.0,
            z_scale: 0.0,
            ..DgpConfig::default()
        };
        let (panel, groups, params) = generate_dgp(&cfg, RngSpec::new(5, 0)).unwrap();
        let r = panel.residuals(&cfg.beta).unwrap();
        for i in 0..30 {
            for s in 0..8 {
                let a = params.alpha[0][(groups.labels()[i], s)];
                assert!((r[(i, s)] - a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loadings_layout() {
        assert_eq!(loading_shift(0, 1, 3.0), 3.0);
        assert_eq!(loading_shift(1, 0, 3.0), 1.0);
        assert_eq!(loading_shift(1, 1, 3.0), 0.0);
    }

    #[test]
    fn misclassification_basics() {
        let g = GroupAssignment::from_labels(vec![0, 0, 1, 1]);
        let swapped = GroupAssignment::from_labels(vec![1, 1, 0, 0]);
        assert_eq!(misclassification_rate(&swapped, &g).unwrap(), 0.0);
        let constant = GroupAssignment::from_labels(vec![0; 4]);
        assert_eq!(misclassification_rate(&constant, &g).unwrap(), 0.5);
        let one_off = GroupAssignment::from_labels(vec![1, 1, 0, 1]);
        assert_eq!(misclassification_rate(&one_off, &g).unwrap(), 0.25);
    }

    #[test]
    fn table_formatting() {
        let row = TableRow {
            g: 2,
            t: 50,
            n: 200,
            mae_s: Some(0.0154),
            mae_ps: Some(0.006),
            mae_oracle: None,
            misclass_s: Some(0.0),
            reps_used: 50,
            reps_failed: 0,
        };
        let csv = emit_table(&[row], TableFormat::Csv);
        assert_eq!(
            csv,
            "G,T,N,S,P-S,Oracle,Misclassification S,reps,failed\n2,50,200,0.015,0.006,NA,0.000,50,0\n"
        );
    }

    #[test]
    fn config_parsing() {
        let cfg = parse_experiment_config(
            "# design\nN = 100, 200\nT=20\nG = 2\nsigma2 = 4\nM=2\nreps = 3\nseed = 11\nestimators = S, Oracle\n",
        )
        .unwrap();
        assert_eq!(cfg.cells.len(), 2);
        assert_eq!(cfg.cells[1].n, 200);
        assert_eq!(cfg.cells[0].sigma2, 4.0);
        assert_eq!(cfg.cells[0].m, 2);
        assert_eq!(cfg.estimators, vec![Estimator::Spectral, Estimator::Oracle]);
        assert!(parse_experiment_config("bogus = 1").is_err());
        assert!(parse_experiment_config("N = x").is_err());
        assert!(parse_experiment_config("N = 1\nG = 2").is_err());
    }

    #[test]
    fn grid_shape() {
        let grid = standard_grid(3, 50, 7).unwrap();
        assert_eq!(grid.len(), 18);
        assert_eq!((grid[0].g, grid[0].t, grid[0].n), (2, 20, 100));
        assert_eq!((grid[17].g, grid[17].t, grid[17].n), (7, 100, 400));
        assert!(grid.iter().all(|c| c.m == 2 && c.sigma2 == 1.0));
        assert!(standard_grid(5, 50, 7).is_err());
    }
}
