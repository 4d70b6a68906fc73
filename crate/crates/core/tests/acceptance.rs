//! Acceptance suite. Runs without the libtest harness so every check prints
//! its own PASS/FAIL line; the process fails if any check fails.

use std::time::Instant;

use grouped_panel::classify::ClassifyConfig;
use grouped_panel::dynamic::dynamic_post_spectral;
use grouped_panel::eigsolve::{dense_eigenvalues, top_k_abs_eigenvalues, DenseOperator, EigBackend};
use grouped_panel::penalized::{kkt_residual, solve_penalized, LassoProblem};
use grouped_panel::postspectral::{pooled_ols, post_spectral};
use grouped_panel::simulate::{
    emit_replications_csv, emit_table, generate_dgp, mean_abs_error, standard_design, run_replication,
    run_replications, DgpConfig, Estimator, SimOptions, TableFormat, TableRow,
};
use grouped_panel::spectral::{QuadraticEstimate, ResidualDifferenceOperator};
use grouped_panel::{BalancedPanel, GroupAssignment, RngSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const SEED: u64 = 7;
const REPS: usize = 50;

/// `|got - target| <= max(0.01, 0.5 * target)`.
fn cell_tolerance(target: f64) -> f64 {
    (0.5 * target.abs()).max(0.01)
}

fn table_cell(table: u8, g: usize, t: usize, n: usize) -> TableRow {
    let (sigma2, m) = standard_design(table).unwrap();
    let cfg = DgpConfig {
        n,
        t,
        g,
        m,
        sigma2,
        n_reps: REPS,
        seed: SEED,
        ..DgpConfig::default()
    };
    run_replications(&cfg, &SimOptions::default()).unwrap().row
}

fn check_columns(row: &TableRow, targets: &[(&str, f64, Option<f64>)]) -> Outcome {
    let mut pass = row.reps_failed == 0;
    let mut parts = vec![format!("failed reps {}", row.reps_failed)];
    for &(name, target, tol) in targets {
        let got = match name {
            "S" => row.mae_s,
            "P-S" => row.mae_ps,
            "Oracle" => row.mae_oracle,
            "misclass" => row.misclass_s,
            _ => unreachable!(),
        };
        let tol = tol.unwrap_or_else(|| cell_tolerance(target));
        let ok = got.is_some_and(|v| (v - target).abs() <= tol);
        pass &= ok;
        parts.push(format!(
            "{name} {} vs {target:.3}±{tol:.3}",
            got.map_or("NA".into(), |v| format!("{v:.4}"))
        ));
    }
    outcome(pass, parts.join(", "))
}

fn c1_t1_g2() -> Outcome {
    let row = table_cell(1, 2, 50, 200);
    check_columns(
        &row,
        &[("S", 0.015, None), ("P-S", 0.006, None), ("Oracle", 0.006, None), ("misclass", 0.0, None)],
    )
}

fn c1_t1_g7_t20() -> Outcome {
    let row = table_cell(1, 7, 20, 100);
    check_columns(&row, &[("misclass", 0.346, Some(0.10))])
}

fn c1_t1_g7_t100() -> Outcome {
    let row = table_cell(1, 7, 100, 400);
    check_columns(&row, &[("P-S", 0.003, None)])
}

fn c1_t2_g2() -> Outcome {
    let row = table_cell(2, 2, 20, 100);
    check_columns(&row, &[("S", 0.026, None), ("P-S", 0.005, None), ("misclass", 0.0, None)])
}

fn c1_t4_g7() -> Outcome {
    let row = table_cell(4, 7, 100, 400);
    check_columns(&row, &[("P-S", 0.001, None), ("misclass", 0.0, None)])
}

fn c2_rank_bound() -> Outcome {
    let mut gen = RngSpec::new(202, 0).rng();
    let mut failures = 0;
    let mut worst = 0usize;
    for inst in 0..100 {
        let g = gen.random_range(1..=3);
        let m = gen.random_range(1..=2);
        let cfg = DgpConfig {
            n: gen.random_range(20..=60),
            t: gen.random_range(5..=40),
            g,
            m,
            v_scale: 0.0,
            z_scale: 0.0,
            ..DgpConfig::default()
        };
        let (panel, _, _) = generate_dgp(&cfg, RngSpec::new(2, inst)).unwrap();
        let bound = 2 * g * m + 2;
        for _ in 0..5 {
            let b: Vec<f64> = (0..panel.n_covariates()).map(|_| 2.0 * gen.sample::<f64, _>(StandardNormal)).collect();
            let op = ResidualDifferenceOperator::new(&panel, &b).unwrap();
            let values = dense_eigenvalues(&op).unwrap();
            let norm = values[0].abs();
            let count = values.iter().filter(|v| v.abs() > 1e-8 * norm).count();
            worst = worst.max(count.saturating_sub(bound));
            if count > bound {
                failures += 1;
            }
        }
    }
    outcome(failures == 0, format!("{failures} of 500 probes exceed 2GM+2, worst excess {worst}"))
}

fn c3_reconstruction() -> Outcome {
    let mut gen = RngSpec::new(303, 0).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = gen.random_range(1..=6);
        let w = DMatrix::<f64>::from_fn(d, d, |_, _| gen.sample(StandardNormal));
        let sigma = (&w + w.transpose()) * 0.5;
        let s = DVector::<f64>::from_fn(d, |_, _| gen.sample(StandardNormal));
        let l: f64 = gen.sample(StandardNormal);
        let q = QuadraticEstimate::from_evaluator(d, |_, b| {
            let b = DVector::from_column_slice(b);
            Ok((b.transpose() * &sigma * &b)[(0, 0)] + s.dot(&b) + l)
        })
        .unwrap();
        let scale = sigma.norm().max(s.norm()).max(l.abs());
        worst = worst
            .max((&q.sigma_hat - &sigma).norm() / scale)
            .max((&q.s_hat - &s).norm() / scale)
            .max((q.l_hat - l).abs() / scale);
    }
    outcome(worst <= 1e-10, format!("worst relative error {worst:.2e}"))
}

fn planted_gap(n: usize, k: usize, gen: &mut impl Rng) -> (DMatrix<f64>, Vec<f64>) {
    let q = DMatrix::<f64>::from_fn(n, n, |_, _| gen.sample(StandardNormal)).qr().q();
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let sign = if gen.random_bool(0.5) { 1.0 } else { -1.0 };
            if i < k {
                sign * gen.random_range(2.0..10.0)
            } else {
                sign * gen.random_range(0.0..0.2)
            }
        })
        .collect();
    let a = &q * DMatrix::from_diagonal(&DVector::from_vec(values.clone())) * q.transpose();
    ((&a + a.transpose()) * 0.5, values)
}

fn c4_eigensolver() -> Outcome {
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut gen = RngSpec::new(404, seed).rng();
        let n = gen.random_range(50..=500);
        let k = gen.random_range(1..=20);
        let (a, _) = planted_gap(n, k, &mut gen);
        let op = DenseOperator(a);
        let dense = top_k_abs_eigenvalues(&op, k, EigBackend::Dense, RngSpec::new(0, 0)).unwrap();
        let rand = top_k_abs_eigenvalues(&op, k, EigBackend::randomized(), RngSpec::new(404, 1000 + seed)).unwrap();
        let err = dense
            .iter()
            .zip(&rand)
            .map(|(d, r)| (d - r).abs() / d.abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        if err > 1e-6 {
            failures += 1;
        }
    }
    outcome(failures == 0, format!("{failures} of 50 seeds fail, worst relative error {worst:.2e}"))
}

/// Least squares with one dummy per (group, period) cell.
fn dummy_ols(panel: &BalancedPanel, groups: &GroupAssignment) -> Vec<f64> {
    let (n, t, d) = (panel.n_units(), panel.n_periods(), panel.n_covariates());
    let g = groups.n_groups();
    let mut design = DMatrix::zeros(n * t, d + g * t);
    let mut y = DVector::zeros(n * t);
    for i in 0..n {
        for s in 0..t {
            let row = i * t + s;
            for k in 0..d {
                design[(row, k)] = panel.x(k)[(i, s)];
            }
            design[(row, d + groups.labels()[i] * t + s)] = 1.0;
            y[row] = panel.y()[(i, s)];
        }
    }
    let coef = design.svd(true, true).solve(&y, 1e-13).unwrap();
    coef.rows(0, d).iter().copied().collect()
}

fn c5_fwl() -> Outcome {
    let mut gen = RngSpec::new(505, 0).rng();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let g = gen.random_range(1..=3);
        let d = gen.random_range(1..=3);
        let t = gen.random_range(2..=8);
        let n = gen.random_range((g + d + 1).max(4)..=30);
        let labels: Vec<usize> = (0..n).map(|i| if i < g { i } else { gen.random_range(0..g) }).collect();
        let groups = GroupAssignment::new(labels, g).unwrap();
        let y = DMatrix::from_fn(n, t, |_, _| gen.sample(StandardNormal));
        let x: Vec<DMatrix<f64>> = (0..d).map(|_| DMatrix::from_fn(n, t, |_, _| gen.sample(StandardNormal))).collect();
        let panel = BalancedPanel::from_arrays(y, x).unwrap();
        let fit = pooled_ols(&panel, &groups).unwrap();
        let oracle = dummy_ols(&panel, &groups);
        for (a, b) in fit.beta_hat.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-8, format!("worst absolute difference {worst:.2e}"))
}

/// Minimizer of the 3-dimensional lasso objective by trying every sign
/// pattern and keeping the one whose stationary point is consistent.
fn sign_pattern_lasso(sigma: &DMatrix<f64>, s: &DVector<f64>, lambda: f64) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..27 {
        let signs = [code % 3, (code / 3) % 3, code / 9].map(|c| c as f64 - 1.0);
        let support: Vec<usize> = (0..3).filter(|&k| signs[k] != 0.0).collect();
        let mut b = vec![0.0; 3];
        if !support.is_empty() {
            let m = support.len();
            let a = DMatrix::from_fn(m, m, |r, c| 2.0 * sigma[(support[r], support[c])]);
            let rhs = DVector::from_fn(m, |r, _| -(s[support[r]] + lambda * signs[support[r]]));
            let Some(sol) = a.lu().solve(&rhs) else { continue };
            for (r, &k) in support.iter().enumerate() {
                b[k] = sol[r];
            }
        }
        let consistent = (0..3).all(|k| signs[k] == 0.0 || b[k] * signs[k] > 0.0);
        if consistent && kkt_residual(sigma, s, lambda, &b) < 1e-9 {
            let obj = grouped_panel::penalized::lasso_objective(sigma, s, lambda, &b);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, b));
            }
        }
    }
    best.expect("a strictly convex problem has a consistent pattern").1
}

fn random_pd(d: usize, gen: &mut impl Rng) -> DMatrix<f64> {
    let w = DMatrix::<f64>::from_fn(d, d, |_, _| gen.sample(StandardNormal));
    &w * w.transpose() / d as f64 + DMatrix::identity(d, d) * 0.1
}

fn c6_lasso() -> Outcome {
    let mut gen = RngSpec::new(606, 0).rng();
    let mut worst_kkt: f64 = 0.0;
    for _ in 0..100 {
        let d = gen.random_range(1..=50);
        let sigma = random_pd(d, &mut gen);
        let s = DVector::<f64>::from_fn(d, |_, _| gen.sample(StandardNormal));
        let lambda = gen.random_range(0.0..1.0) * s.amax();
        let sol = solve_penalized(&LassoProblem::new(sigma, s, lambda), 1e-9, 1_000_000).unwrap();
        worst_kkt = worst_kkt.max(sol.kkt_residual);
    }
    let mut worst_diff: f64 = 0.0;
    for _ in 0..100 {
        let sigma = random_pd(3, &mut gen);
        let s = DVector::<f64>::from_fn(3, |_, _| gen.sample(StandardNormal));
        let lambda = gen.random_range(0.0..1.0) * s.amax();
        let sol = solve_penalized(&LassoProblem::new(sigma.clone(), s.clone(), lambda), 1e-12, 1_000_000).unwrap();
        let oracle = sign_pattern_lasso(&sigma, &s, lambda);
        for (a, b) in sol.beta_lambda.iter().zip(&oracle) {
            worst_diff = worst_diff.max((a - b).abs());
        }
    }
    outcome(
        worst_kkt <= 1e-7 && worst_diff <= 1e-7,
        format!("worst certificate {worst_kkt:.2e}, worst sign-pattern difference {worst_diff:.2e}"),
    )
}

fn c7_consistency() -> Outcome {
    let opts = SimOptions {
        estimators: vec![Estimator::PostSpectral],
        ..SimOptions::default()
    };
    let mut lines = Vec::new();
    let mut pass = true;
    for (g, t, n) in [(2, 50, 100), (3, 50, 200)] {
        let cfg = DgpConfig {
            n,
            t,
            g,
            sigma2: 4.0,
            n_reps: 50,
            seed: 77,
            ..DgpConfig::default()
        };
        let mut perfect = 0;
        let mut min_sep = f64::INFINITY;
        for rep in 0..cfg.n_reps {
            let (_, _, params) = generate_dgp(&cfg, RngSpec::new(cfg.seed, rep as u64).derive(0xD6)).unwrap();
            let a = &params.alpha[0];
            for g1 in 0..g {
                for g2 in 0..g1 {
                    let sep = (a.row(g1) - a.row(g2)).norm_squared() / t as f64;
                    min_sep = min_sep.min(sep);
                }
            }
            let r = run_replication(&cfg, &opts, rep).unwrap();
            if r.misclass_s == Some(0.0) {
                perfect += 1;
            }
        }
        pass &= perfect >= 49 && min_sep >= 1.0;
        lines.push(format!("G={g} T={t} N={n}: {perfect}/50 exact, min separation {min_sep:.2}"));
    }
    outcome(pass, lines.join("; "))
}

fn c8_coverage() -> Outcome {
    let cfg = DgpConfig {
        n: 200,
        t: 50,
        g: 2,
        sigma2: 4.0,
        n_reps: 200,
        seed: 88,
        ..DgpConfig::default()
    };
    let truth = cfg.beta[0];
    let mut covered = 0;
    for rep in 0..cfg.n_reps {
        let rng = RngSpec::new(cfg.seed, rep as u64);
        let (panel, _, _) = generate_dgp(&cfg, rng.derive(0xD6)).unwrap();
        let (_, fit) = post_spectral(&panel, 2, 1, rng.derive(0xC1), &ClassifyConfig::default()).unwrap();
        if (fit.beta_hat[0] - truth).abs() <= 1.959964 * fit.std_errors[0] {
            covered += 1;
        }
    }
    let rate = covered as f64 / cfg.n_reps as f64;
    outcome((0.88..=0.99).contains(&rate), format!("coverage {rate:.3} over 200 replications"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

fn c9_dynamic() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for theta in [0.0, 0.5] {
        let cfg = DgpConfig {
            n: 400,
            t: 100,
            g: 2,
            theta: Some(theta),
            n_reps: 20,
            seed: 99,
            ..DgpConfig::default()
        };
        let mut theta_err = Vec::new();
        let (mut mae_dyn, mut mae_static) = (0.0, 0.0);
        for rep in 0..cfg.n_reps {
            let rng = RngSpec::new(cfg.seed, rep as u64);
            let (panel, _, _) = generate_dgp(&cfg, rng.derive(0xD6)).unwrap();
            let dyn_fit = dynamic_post_spectral(&panel, 2, 1, rng.derive(0xC1), &ClassifyConfig::default()).unwrap();
            theta_err.push((dyn_fit.theta_hat - theta).abs());
            mae_dyn += mean_abs_error(&dyn_fit.beta_hat, &cfg.beta);
            if theta == 0.0 {
                let (_, fit) = post_spectral(&panel, 2, 1, rng.derive(0xC1), &ClassifyConfig::default()).unwrap();
                mae_static += mean_abs_error(&fit.beta_hat, &cfg.beta);
            }
        }
        let med = median(theta_err);
        let reps = cfg.n_reps as f64;
        if theta == 0.0 {
            let ratio = mae_dyn / mae_static;
            pass &= med <= 0.05 && ratio <= 2.0;
            parts.push(format!(
                "theta=0: median |theta_hat| {med:.4}, beta MAE {:.4} vs static {:.4}",
                mae_dyn / reps,
                mae_static / reps
            ));
        } else {
            pass &= med <= 0.05;
            parts.push(format!("theta=0.5: median error {med:.4}"));
        }
    }
    outcome(pass, parts.join("; "))
}

fn c10_determinism() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (g, t, n) in [(2, 20, 100), (7, 20, 100)] {
        let cfg = DgpConfig {
            n,
            t,
            g,
            n_reps: 6,
            seed: 1010,
            ..DgpConfig::default()
        };
        let render = |threads: Option<usize>| {
            let opts = SimOptions {
                threads,
                ..SimOptions::default()
            };
            let cell = run_replications(&cfg, &opts).unwrap();
            let table = emit_table(std::slice::from_ref(&cell.row), TableFormat::Csv);
            format!("{table}{}", emit_replications_csv(&[cell]))
        };
        let base = render(Some(1));
        let same = [render(Some(1)), render(Some(3)), render(None)].iter().all(|o| *o == base);
        pass &= same;
        parts.push(format!("G={g}: {}", if same { "identical" } else { "differs" }));
    }
    outcome(pass, parts.join(", "))
}

fn main() {
    type Check = (&'static str, fn() -> Outcome);
    let checks: [Check; 14] = [
        ("1  design 1, G=2, T=50, N=200", c1_t1_g2),
        ("1  design 1, G=7, T=20, N=100 misclassification", c1_t1_g7_t20),
        ("1  design 1, G=7, T=100, N=400", c1_t1_g7_t100),
        ("1  design 2, G=2, T=20, N=100", c1_t2_g2),
        ("1  design 4, G=7, T=100, N=400", c1_t4_g7),
        ("2  rank bound on noiseless panels", c2_rank_bound),
        ("3  quadratic reconstruction", c3_reconstruction),
        ("4  randomized vs dense eigenvalues", c4_eigensolver),
        ("5  pooled OLS vs dummy regression", c5_fwl),
        ("6  lasso certificate and sign-pattern oracle", c6_lasso),
        ("7  classifier consistency", c7_consistency),
        ("8  clustered interval coverage", c8_coverage),
        ("9  dynamic reduction", c9_dynamic),
        ("10 determinism across thread counts", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let out = check();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {name}: {verdict} ({}; {:.1}s)",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} checks passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
