//! `grouped-panel` command-line frontend.
//!
//! Exit codes: 0 on success, 2 for invalid input or flags, 3 when the
//! numerics fail. Every failure is reported as a single line on stderr.

use std::collections::hash_map::RandomState;
use std::fmt::Write as _;
use std::fs::File;
use std::hash::BuildHasher;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use grouped_panel::classify::{classify, ClassifyConfig, LambdaSearch};
use grouped_panel::dynamic::{augment_panel, dynamic_post_spectral, dynamic_spectral, DynamicInner};
use grouped_panel::eigsolve::EigBackend;
use grouped_panel::panel::{load_panel_csv, read_groups_csv, write_groups_csv, write_panel_csv};
use grouped_panel::penalized::{lambda_rule, penalized_spectral};
use grouped_panel::postspectral::{oracle_ols, post_spectral};
use grouped_panel::simulate::{
    emit_replications_csv, emit_table, generate_dgp, standard_grid, parse_experiment_config, run_replications,
    DgpConfig, Estimator, SimOptions, TableFormat,
};
use grouped_panel::spectral::{spectral_estimate, spectral_estimate_ife};
use grouped_panel::{BalancedPanel, Error, PanelSchema, RngSpec};

#[derive(Parser, Debug)]
#[command(name = "grouped-panel", version, about = "Spectral estimators for panels with latent group effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate slope coefficients on a panel file.
    Estimate(EstimateArgs),
    /// Estimate group membership and write it out.
    Classify(ClassifyArgs),
    /// Run Monte Carlo replications and emit summary tables.
    Simulate(SimulateArgs),
    /// Draw one panel from the simulation design.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Spectral,
    PostSpectral,
    Oracle,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Auto,
    Dense,
    Randomized,
}

impl From<Backend> for EigBackend {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Auto => EigBackend::default(),
            Backend::Dense => EigBackend::Dense,
            Backend::Randomized => EigBackend::randomized(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Search {
    Exact,
    Bisection,
}

#[derive(Args, Debug)]
struct PanelArgs {
    /// Long-format panel CSV.
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, default_value = "unit")]
    unit_col: String,
    #[arg(long, default_value = "time")]
    time_col: String,
    #[arg(long, default_value = "y")]
    outcome_col: String,
    /// Comma-separated covariate columns; all remaining columns if omitted.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

impl PanelArgs {
    fn load(&self) -> grouped_panel::Result<BalancedPanel> {
        let schema = PanelSchema {
            unit: self.unit_col.clone(),
            time: self.time_col.clone(),
            outcome: self.outcome_col.clone(),
            covariates: self.covariates.clone(),
        };
        load_panel_csv(&self.input, &schema)
    }
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Seed for every random draw; a fresh one is printed if omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Backend::Auto)]
    backend: Backend,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long, value_enum, conflicts_with = "lasso")]
    method: Option<Method>,
    /// Same as `--method lasso`.
    #[arg(long)]
    lasso: bool,
    /// Number of groups.
    #[arg(long = "G")]
    g: Option<usize>,
    /// Number of covariate factors.
    #[arg(long = "M", default_value_t = 1)]
    m: usize,
    /// Interactive fixed effects with this many factors (spectral only).
    #[arg(long = "J", requires = "ife")]
    j: Option<usize>,
    #[arg(long, requires = "j")]
    ife: bool,
    /// Include the lagged outcome as a regressor.
    #[arg(long)]
    dynamic: bool,
    /// Known groups as `unit,group` CSV (oracle method).
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Penalty level for the lasso method.
    #[arg(long, conflicts_with = "lambda_rule_c")]
    lambda: Option<f64>,
    /// Constant C in the default penalty rule.
    #[arg(long = "lambda-rule-C")]
    lambda_rule_c: Option<f64>,
    #[arg(long, value_enum, default_value_t = Search::Exact)]
    lambda_search: Search,
    /// Coefficient report; stdout only if omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Write estimated groups here (post-spectral).
    #[arg(long)]
    groups_out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long = "G")]
    g: usize,
    #[arg(long = "M", default_value_t = 1)]
    m: usize,
    #[arg(long)]
    dynamic: bool,
    #[arg(long, value_enum, default_value_t = Search::Exact)]
    lambda_search: Search,
    /// Classification CSV (`unit_id,h_i,g_hat`).
    #[arg(long, short)]
    output: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Run the full grid of standard design 1 to 4.
    #[arg(long = "design", visible_alias = "paper-table", conflicts_with = "config")]
    design: Option<u8>,
    /// Experiment file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "N", value_delimiter = ',', conflicts_with = "design")]
    n: Option<Vec<usize>>,
    #[arg(long = "T", value_delimiter = ',', conflicts_with = "design")]
    t: Option<Vec<usize>>,
    #[arg(long = "G", value_delimiter = ',', conflicts_with = "design")]
    g: Option<Vec<usize>>,
    #[arg(long = "M", conflicts_with = "design")]
    m: Option<usize>,
    #[arg(long, conflicts_with = "design")]
    sigma2: Option<f64>,
    /// Replications per cell.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated subset of `spectral,post-spectral,oracle`.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    #[arg(long)]
    dynamic: bool,
    /// Autoregressive coefficient of the design.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, value_enum, default_value_t = Search::Exact)]
    lambda_search: Search,
    /// Summary table file.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Per-replication CSV.
    #[arg(long)]
    per_rep: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long = "N", default_value_t = 100)]
    n: usize,
    #[arg(long = "T", default_value_t = 20)]
    t: usize,
    #[arg(long = "G", default_value_t = 2)]
    g: usize,
    #[arg(long = "M", default_value_t = 1)]
    m: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Panel CSV.
    #[arg(long, short)]
    output: PathBuf,
    /// True groups CSV.
    #[arg(long)]
    groups_out: Option<PathBuf>,
}

/// Anything that ends the run early, tagged with its exit code.
#[derive(Debug)]
enum Failure {
    Validation(String),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Numeric(e.to_string())
        }
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Validation(msg.into()))
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Validation(format!("i/o error on {}: {e}", path.display()))
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = RandomState::new().hash_one(Instant::now());
        info!("no seed given, using {s}");
        println!("seed: {s}");
        s
    })
}

fn install_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(k) = threads {
        if k == 0 {
            return invalid("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Validation(format!("cannot start worker pool: {e}")))?;
    }
    Ok(())
}

fn lambda_search(s: Search) -> LambdaSearch {
    match s {
        Search::Exact => LambdaSearch::Exact,
        Search::Bisection => LambdaSearch::PairwiseBisection,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_failure(path, e))
}

/// Coefficients plus scalar diagnostics of one estimation.
struct Report {
    method: &'static str,
    terms: Vec<(String, f64, Option<f64>)>,
    stats: Vec<(&'static str, String)>,
}

impl Report {
    fn render(&self, format: Format) -> String {
        let se = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::new();
        match format {
            Format::Csv => {
                out.push_str("kind,name,value,std_error\n");
                for (name, est, sd) in &self.terms {
                    let _ = writeln!(out, "coef,{name},{est},{}", se(*sd));
                }
                for (name, value) in &self.stats {
                    let _ = writeln!(out, "stat,{name},{value},");
                }
            }
            Format::Markdown => {
                let _ = writeln!(out, "| term | estimate | std. error |\n|---|---|---|");
                for (name, est, sd) in &self.terms {
                    let _ = writeln!(out, "| {name} | {est} | {} |", se(*sd));
                }
                let _ = writeln!(out, "\n| statistic | value |\n|---|---|");
                for (name, value) in &self.stats {
                    let _ = writeln!(out, "| {name} | {value} |");
                }
            }
        }
        out
    }

    fn summary(&self) -> String {
        let mut out = format!("method: {}\n", self.method);
        for (name, est, sd) in &self.terms {
            match sd {
                Some(sd) => {
                    let _ = writeln!(out, "  {name:>12} {est:>12.6} ({sd:.6})");
                }
                None => {
                    let _ = writeln!(out, "  {name:>12} {est:>12.6}");
                }
            }
        }
        for (name, value) in &self.stats {
            let _ = writeln!(out, "  {name}: {value}");
        }
        out
    }
}

fn named_terms(names: &[String], est: &[f64], se: Option<&[f64]>) -> Vec<(String, f64, Option<f64>)> {
    names
        .iter()
        .zip(est)
        .enumerate()
        .map(|(k, (n, &b))| (n.clone(), b, se.map(|s| s[k])))
        .collect()
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let method = if args.lasso {
        Method::Lasso
    } else {
        args.method.unwrap_or(Method::Spectral)
    };
    // Flag combinations are checked before anything is read or computed.
    if args.ife && method != Method::Spectral {
        return invalid("--ife is only available with the spectral method");
    }
    if args.ife && args.dynamic {
        return invalid("--ife and --dynamic cannot be combined");
    }
    if method == Method::Lasso && args.dynamic {
        return invalid("the lasso method has no dynamic variant");
    }
    if (args.lambda.is_some() || args.lambda_rule_c.is_some()) && method != Method::Lasso {
        return invalid("--lambda and --lambda-rule-C apply to the lasso method only");
    }
    if method == Method::Oracle && args.groups.is_none() {
        return invalid("the oracle method needs --groups");
    }
    if args.groups_out.is_some() && method != Method::PostSpectral {
        return invalid("--groups-out applies to the post-spectral method only");
    }
    let g = match (args.g, args.ife, method) {
        (_, true, _) | (_, _, Method::Oracle) => args.g.unwrap_or(0),
        (Some(0), ..) => return invalid("--G must be at least 1"),
        (Some(g), ..) => g,
        (None, ..) => return invalid("--G is required"),
    };
    if args.m == 0 {
        return invalid("--M must be at least 1");
    }
    if let Some(c) = args.lambda_rule_c {
        if !(c > 0.0) {
            return invalid("--lambda-rule-C must be positive");
        }
    }
    install_threads(args.common.threads)?;
    let needs_seed = method == Method::PostSpectral;
    let seed = if needs_seed { Some(resolve_seed(args.common.seed)) } else { args.common.seed };
    let backend: EigBackend = args.common.backend.into();
    let cfg = ClassifyConfig {
        backend,
        lambda_search: lambda_search(args.lambda_search),
        k_eigs: None,
    };

    let panel = args.panel.load()?;
    let start = Instant::now();
    let mut names: Vec<String> = panel.covariate_names().to_vec();
    if args.dynamic {
        names.insert(0, grouped_panel::dynamic::LAG_NAME.to_string());
    }
    let mut stats: Vec<(&'static str, String)> = vec![
        ("units", panel.n_units().to_string()),
        ("periods", panel.n_periods().to_string()),
    ];
    let report = match method {
        Method::Spectral => {
            let (coef, fit) = if args.ife {
                let j = args.j.unwrap_or(0);
                let fit = spectral_estimate_ife(&panel, j, backend)?;
                (fit.beta_tilde.clone(), fit)
            } else if args.dynamic {
                let f = dynamic_spectral(&panel, g, args.m, backend)?;
                stats.push(("effective_periods", f.effective_t.to_string()));
                let DynamicInner::Spectral(fit) = f.inner else {
                    return Err(Failure::Numeric("unexpected dynamic fit".into()));
                };
                (fit.beta_tilde.clone(), fit)
            } else {
                let fit = spectral_estimate(&panel, g, args.m, backend)?;
                (fit.beta_tilde.clone(), fit)
            };
            stats.push(("eigenvalues_summed", fit.k_eigs.to_string()));
            stats.push(("sigma_min_eig", fit.condition.0.to_string()));
            stats.push(("sigma_max_eig", fit.condition.1.to_string()));
            Report {
                method: "spectral",
                terms: named_terms(&names, &coef, None),
                stats,
            }
        }
        Method::PostSpectral => {
            let rng = RngSpec::new(seed.unwrap_or(0), 0);
            let (class, fit, effective_t) = if args.dynamic {
                let f = dynamic_post_spectral(&panel, g, args.m, rng, &cfg)?;
                let DynamicInner::PostSpectral(inner) = f.inner else {
                    return Err(Failure::Numeric("unexpected dynamic fit".into()));
                };
                let (class, fit) = *inner;
                (class, fit, Some(f.effective_t))
            } else {
                let (class, fit) = post_spectral(&panel, g, args.m, rng, &cfg)?;
                (class, fit, None)
            };
            if let Some(t) = effective_t {
                stats.push(("effective_periods", t.to_string()));
            }
            stats.push(("lambda_hat", class.lambda_hat.to_string()));
            stats.push(("groups_hat", class.n_groups().to_string()));
            stats.push(("seed", seed.unwrap_or(0).to_string()));
            if let Some(path) = &args.groups_out {
                class.write_csv(panel.unit_ids(), create(path)?)?;
            }
            Report {
                method: "post-spectral",
                terms: named_terms(&names, &fit.beta_hat, Some(&fit.std_errors)),
                stats,
            }
        }
        Method::Oracle => {
            let path = args.groups.as_deref().unwrap_or(Path::new(""));
            let file = File::open(path).map_err(|e| io_failure(path, e))?;
            let groups = read_groups_csv(file, panel.unit_ids())?;
            let fit = if args.dynamic {
                let aug = augment_panel(&panel)?;
                stats.push(("effective_periods", aug.n_periods().to_string()));
                oracle_ols(&aug, &groups)?
            } else {
                oracle_ols(&panel, &groups)?
            };
            stats.push(("groups", groups.n_groups().to_string()));
            Report {
                method: "oracle",
                terms: named_terms(&names, &fit.beta_hat, Some(&fit.std_errors)),
                stats,
            }
        }
        Method::Lasso => {
            let lambda = match args.lambda {
                Some(l) => l,
                None => lambda_rule(
                    panel.n_units(),
                    panel.n_periods(),
                    panel.n_covariates(),
                    args.lambda_rule_c.unwrap_or(1.0),
                )?,
            };
            let sol = penalized_spectral(&panel, g, args.m, lambda, backend)?;
            stats.push(("lambda", lambda.to_string()));
            stats.push(("kkt_residual", sol.kkt_residual.to_string()));
            stats.push(("sweeps", sol.iterations.to_string()));
            stats.push((
                "nonzero",
                sol.beta_lambda.iter().filter(|b| **b != 0.0).count().to_string(),
            ));
            Report {
                method: "lasso",
                terms: named_terms(&names, &sol.beta_lambda, None),
                stats,
            }
        }
    };
    let mut report = report;
    report.stats.push(("seconds", format!("{:.3}", start.elapsed().as_secs_f64())));
    print!("{}", report.summary());
    if let Some(path) = &args.output {
        // Timing is left out of the file so reruns compare equal.
        let stable = Report {
            method: report.method,
            terms: report.terms.clone(),
            stats: report.stats.iter().filter(|(n, _)| *n != "seconds").cloned().collect(),
        };
        write_file(path, &stable.render(args.common.format))?;
    }
    Ok(())
}

fn cmd_classify(args: &ClassifyArgs) -> Result<(), Failure> {
    if args.g == 0 || args.m == 0 {
        return invalid("--G and --M must be at least 1");
    }
    install_threads(args.common.threads)?;
    let seed = resolve_seed(args.common.seed);
    let cfg = ClassifyConfig {
        backend: args.common.backend.into(),
        lambda_search: lambda_search(args.lambda_search),
        k_eigs: None,
    };
    let panel = args.panel.load()?;
    let rng = RngSpec::new(seed, 0);
    let (class, m) = if args.dynamic {
        (classify(&augment_panel(&panel)?, args.g, 2 * args.m, rng, &cfg)?, 2 * args.m)
    } else {
        (classify(&panel, args.g, args.m, rng, &cfg)?, args.m)
    };
    class.write_csv(panel.unit_ids(), create(&args.output)?)?;
    println!("groups: {} (requested {}, factors {m})", class.n_groups(), args.g);
    println!("lambda_hat: {}", class.lambda_hat);
    println!("sizes: {:?}", class.g_hat.sizes());
    Ok(())
}

fn parse_estimators(list: &[String]) -> Result<Vec<Estimator>, Failure> {
    let mut out: Vec<Estimator> = list
        .iter()
        .map(|s| Estimator::from_str(s))
        .collect::<grouped_panel::Result<_>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn dedup_in_order(values: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = Vec::new();
    for v in values {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Design cells from the config file or the standard grid, with flags taking
/// precedence over the file.
fn simulation_cells(args: &SimulateArgs) -> Result<(Vec<DgpConfig>, Vec<Estimator>, bool), Failure> {
    let (mut cells, mut estimators, mut dynamic) = if let Some(table) = args.design {
        let cells = standard_grid(table, 50, 0)?;
        (cells, Estimator::ALL.to_vec(), false)
    } else if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        let exp = parse_experiment_config(&text)?;
        (exp.cells, exp.estimators, exp.dynamic)
    } else {
        (vec![DgpConfig::default()], Estimator::ALL.to_vec(), false)
    };
    if args.n.is_some() || args.t.is_some() || args.g.is_some() {
        let base = cells[0].clone();
        let ns = args.n.clone().unwrap_or_else(|| dedup_in_order(cells.iter().map(|c| c.n)));
        let ts = args.t.clone().unwrap_or_else(|| dedup_in_order(cells.iter().map(|c| c.t)));
        let gs = args.g.clone().unwrap_or_else(|| dedup_in_order(cells.iter().map(|c| c.g)));
        cells = Vec::new();
        for &g in &gs {
            for &t in &ts {
                for &n in &ns {
                    cells.push(DgpConfig { n, t, g, ..base.clone() });
                }
            }
        }
    }
    for c in &mut cells {
        if let Some(m) = args.m {
            c.m = m;
        }
        if let Some(s) = args.sigma2 {
            c.sigma2 = s;
        }
        if let Some(r) = args.reps {
            c.n_reps = r;
        }
        if let Some(th) = args.theta {
            c.theta = Some(th);
        }
    }
    if let Some(list) = &args.estimators {
        estimators = parse_estimators(list)?;
    }
    dynamic |= args.dynamic;
    for c in &cells {
        c.validate()?;
        if c.n_reps == 0 {
            return invalid("--reps must be at least 1");
        }
    }
    Ok((cells, estimators, dynamic))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let (mut cells, estimators, dynamic) = simulation_cells(args)?;
    if let Some(k) = args.common.threads {
        if k == 0 {
            return invalid("--threads must be at least 1");
        }
    }
    let seed = match (args.common.seed, args.config.is_some()) {
        (Some(s), _) => s,
        // a seed from the experiment file stands unless overridden
        (None, true) => cells[0].seed,
        (None, false) => resolve_seed(None),
    };
    for c in &mut cells {
        c.seed = seed;
    }
    let backend: EigBackend = args.common.backend.into();
    let opts = SimOptions {
        estimators,
        classify: ClassifyConfig {
            backend,
            lambda_search: lambda_search(args.lambda_search),
            k_eigs: None,
        },
        backend,
        dynamic,
        threads: args.common.threads,
    };
    let start = Instant::now();
    let mut results = Vec::with_capacity(cells.len());
    for cfg in &cells {
        let cell_start = Instant::now();
        let res = run_replications(cfg, &opts)?;
        info!(
            "G={} T={} N={}: {} reps in {:.2}s",
            cfg.g,
            cfg.t,
            cfg.n,
            cfg.n_reps,
            cell_start.elapsed().as_secs_f64()
        );
        results.push(res);
    }
    let rows: Vec<_> = results.iter().map(|r| r.row.clone()).collect();
    print!("{}", emit_table(&rows, TableFormat::Markdown));
    println!(
        "{} cells, {} replications each, seed {seed}, {:.1}s",
        cells.len(),
        cells[0].n_reps,
        start.elapsed().as_secs_f64()
    );
    if let Some(path) = &args.output {
        write_file(path, &emit_table(&rows, args.common.format.into()))?;
    }
    if let Some(path) = &args.per_rep {
        write_file(path, &emit_replications_csv(&results))?;
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed);
    let cfg = DgpConfig {
        n: args.n,
        t: args.t,
        g: args.g,
        m: args.m,
        sigma2: args.sigma2,
        theta: args.theta,
        seed,
        ..DgpConfig::default()
    };
    let (panel, groups, _) = generate_dgp(&cfg, RngSpec::new(seed, 0))?;
    let mut out = create(&args.output)?;
    write_panel_csv(&panel, &mut out)?;
    out.flush().map_err(|e| io_failure(&args.output, e))?;
    if let Some(path) = &args.groups_out {
        write_groups_csv(&groups, panel.unit_ids(), create(path)?)?;
    }
    println!(
        "wrote {} units x {} periods with {} covariates",
        panel.n_units(),
        panel.n_periods(),
        panel.n_covariates()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(2)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(3)
        }
    }
}
