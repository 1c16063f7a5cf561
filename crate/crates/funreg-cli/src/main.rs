//! funreg: multi-task functional linear regression toolkit.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.

use clap::{Args, Parser, Subcommand};
use funreg::basis::{KnotRule, SplineBasis};
use funreg::diagnostics::{ErrorContext, ErrorReport};
use funreg::estimators::{self, ReducedInit, ReducedMethod};
use funreg::graph;
use funreg::penalty::PenaltySpec;
use funreg::processes::CovKernel;
use funreg::simdiag;
use funreg_cli::tuning::{parse_rule, tuning_rule};
use funreg_cli::{csvio, dataset, selftest, sweep, ExperimentConfig};
use ndarray::Array1;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "funreg",
    about = "Penalized-spline multi-task functional regression: data generation, fitting, rate sweeps, spectral diagnostics",
    version
)]
struct Cli {
    /// Worker threads for replication sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle from a config.
    Gen(GenArgs),
    /// Fit a model on a generated bundle and emit coefficients + errors.
    Fit(FitArgs),
    /// Run a full rate sweep and emit the rates table with fitted slope.
    Rates(RatesArgs),
    /// Graph-Laplacian eigenvalue growth on a sampled manifold.
    GraphEig(GraphEigArgs),
    /// Simultaneous-diagonalization report (gamma spectrum, pbar, cond Q).
    Diag(DiagArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct GenArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    /// Bundle directory produced by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for fit artifacts.
    #[arg(long)]
    out: PathBuf,
    /// pooled | reduced | graph (default: inferred from the scenario).
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    /// Rank for the reduced model (default: the scenario's rank).
    #[arg(long)]
    rank: Option<usize>,
}

#[derive(Args)]
struct RatesArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config's `outputs` field or `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GraphEigArgs {
    /// Intrinsic dimension of the sphere.
    #[arg(long, default_value_t = 2)]
    mu: usize,
    /// Number of sampled points.
    #[arg(long, default_value_t = 2000)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// exp | quartic
    #[arg(long, default_value = "exp")]
    kernel: String,
    /// Bandwidth override (default: the bandwidth rule).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Largest eigenvalue index in the slope fit.
    #[arg(long, default_value_t = 100)]
    m_hi: usize,
    /// Pre-given symmetric weight matrix CSV; bypasses manifold sampling.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagArgs {
    /// brownian | shifted:a,b | ou:c1,c2 | bridge | iterated:q | sobolev:q
    #[arg(long, default_value = "brownian")]
    kernel: String,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 512)]
    grid: usize,
    /// Also emit a grid-refinement convergence report.
    #[arg(long, default_value_t = false)]
    refine: bool,
    #[arg(long)]
    out: PathBuf,
}

fn parse_kernel(text: &str) -> Result<CovKernel, String> {
    let (head, args) = match text.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (text, None),
    };
    let nums = |a: Option<&str>, n: usize| -> Result<Vec<f64>, String> {
        let raw = a.ok_or_else(|| format!("kernel `{head}` needs {n} parameter(s)"))?;
        let vals: Result<Vec<f64>, _> = raw.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| format!("kernel parameters: {e}"))?;
        if vals.len() != n {
            return Err(format!("kernel `{head}` needs {n} parameter(s)"));
        }
        Ok(vals)
    };
    match head {
        "brownian" => Ok(CovKernel::Brownian),
        "bridge" => Ok(CovKernel::BrownianBridge),
        "shifted" => {
            let v = nums(args, 2)?;
            Ok(CovKernel::BrownianShifted { a: v[0], b: v[1] })
        }
        "ou" => {
            let v = nums(args, 2)?;
            Ok(CovKernel::OrnsteinUhlenbeck { c1: v[0], c2: v[1] })
        }
        "iterated" => {
            let v = nums(args, 1)?;
            Ok(CovKernel::IteratedBrownian { q: v[0] as usize })
        }
        "sobolev" => {
            let v = nums(args, 1)?;
            Ok(CovKernel::sobolev_unit(v[0] as usize))
        }
        _ => Err(format!("unknown kernel `{text}`")),
    }
}

/// Usage-level failure (bad flags, unreadable config).
struct UsageError(String);
/// Numerical failure during a run.
struct RunError(String);

enum CmdError {
    Usage(UsageError),
    Run(RunError),
}

impl From<UsageError> for CmdError {
    fn from(e: UsageError) -> Self {
        CmdError::Usage(e)
    }
}

impl From<RunError> for CmdError {
    fn from(e: RunError) -> Self {
        CmdError::Run(e)
    }
}

impl From<funreg::FunRegError> for CmdError {
    fn from(e: funreg::FunRegError) -> Self {
        CmdError::Run(RunError(e.to_string()))
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Run(RunError(e.to_string()))
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, UsageError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_json(&text)
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    cfg.validate()
        .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn cmd_gen(args: GenArgs) -> Result<(), CmdError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let rule = parse_rule(&cfg.sweep.tuning_rule).map_err(UsageError)?;
    let mut scenario = cfg.scenario.clone();
    scenario.seed = cfg.master_seed;
    let rank = scenario.rank_true.unwrap_or(1);
    let (k, eta1, eta2) = tuning_rule(
        rule,
        scenario.n_obs,
        scenario.m_tasks,
        rank,
        &cfg.sweep.consts,
        &cfg.sweep.overrides,
    );
    let basis = SplineBasis::make_basis(k, cfg.sweep.consts.order, KnotRule::Uniform)?;
    let system = simdiag::diagonalize(&basis, &scenario.kernel, cfg.sweep.consts.d, cfg.kernel_grid)?;
    let generated = funreg::simgen::generate(&scenario, &system)?;
    let manifest = dataset::Manifest {
        format_version: dataset::FORMAT_VERSION,
        scenario,
        k,
        order: cfg.sweep.consts.order,
        d: cfg.sweep.consts.d,
        kernel_grid: cfg.kernel_grid,
        eta1,
        eta2,
        config_hash: cfg.hash(),
    };
    dataset::write_bundle(&args.out, &manifest, &generated).map_err(|e| RunError(e))?;
    println!(
        "wrote bundle: {} tasks x {} observations, K = {k}, to {}",
        manifest.scenario.m_tasks,
        manifest.scenario.n_obs,
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), CmdError> {
    let bundle = dataset::load_bundle(&args.data).map_err(|e| UsageError(e))?;
    let eta1 = args.eta1.unwrap_or(bundle.manifest.eta1);
    let eta2 = args.eta2.unwrap_or(bundle.manifest.eta2);
    let model = match &args.model {
        Some(name) => name.clone(),
        None => match &bundle.manifest.scenario.beta0 {
            funreg::simgen::Beta0Family::SingleSmooth => "pooled".into(),
            funreg::simgen::Beta0Family::ReducedRank { .. } => "reduced".into(),
            funreg::simgen::Beta0Family::GraphSphere => "graph".into(),
        },
    };
    let system = &bundle.system;
    let m = bundle.data.n_tasks();
    let (fit, spec) = match model.as_str() {
        "pooled" => (
            estimators::fit_pooled(&bundle.data, system, eta1)?,
            PenaltySpec::roughness(system, eta1, m)?,
        ),
        "reduced" => {
            let rank = args
                .rank
                .or(bundle.manifest.scenario.rank_true)
                .ok_or_else(|| UsageError("reduced model needs --rank".into()))?;
            (
                estimators::fit_reduced(
                    &bundle.data,
                    system,
                    eta1,
                    rank,
                    ReducedInit::SvdOfPooled,
                    ReducedMethod::Als,
                )?,
                PenaltySpec::roughness(system, eta1, m)?,
            )
        }
        "graph" => {
            let pts = bundle
                .aux_points
                .clone()
                .ok_or_else(|| UsageError("bundle has no auxiliary points for a graph fit".into()))?;
            let manifold = bundle
                .manifest
                .scenario
                .manifold
                .ok_or_else(|| UsageError("scenario lacks a manifold".into()))?;
            let sample = funreg::AuxiliarySample {
                points: pts,
                manifold,
            };
            let h = graph::default_bandwidth(sample.intrinsic_dim(), m);
            let lap = graph::build_laplacian(&sample, h, funreg::KernelG::ExpTrunc)?;
            let fit = estimators::fit_graph(&bundle.data, system, &lap, eta1, eta2)?;
            let sigma_hat = bundle.data.pooled_covariance();
            let spec = PenaltySpec::graph(system, &lap, sigma_hat, eta1, eta2)?;
            (fit, spec)
        }
        other => return Err(UsageError(format!("unknown model `{other}`")).into()),
    };
    let ctx = ErrorContext::new(system)?;
    let report = ErrorReport::compute(&ctx, &spec, &fit.b, &bundle.beta0_grid)?;
    std::fs::create_dir_all(&args.out)?;
    let meta = [
        ("config_hash", bundle.manifest.config_hash.clone()),
        ("seed", bundle.manifest.scenario.seed.to_string()),
        ("model", model.clone()),
        ("objective", format!("{}", fit.objective())),
        ("converged", fit.converged.to_string()),
        ("iterations", fit.iterations.to_string()),
    ];
    csvio::write_matrix_csv(&args.out.join("coefficients.csv"), &fit.b, &meta)?;
    csvio::write_vector_csv(&args.out.join("alpha.csv"), &fit.alpha, &meta)?;
    csvio::write_vector_csv(
        &args.out.join("objective_trace.csv"),
        &Array1::from(fit.objective_trace.clone()),
        &meta,
    )?;
    let mut lines = vec![format!(
        "# combined = {}\n# penalty = {}\ntask,x_norm_err",
        report.combined, report.penalty_val
    )];
    for (t, e) in report.x_norm_errs.iter().enumerate() {
        lines.push(format!("{t},{e}"));
    }
    std::fs::write(args.out.join("report.csv"), lines.join("\n") + "\n")?;
    println!(
        "model = {model}, objective = {:.6e}, combined error = {:.6e}",
        fit.objective(),
        report.combined
    );
    Ok(())
}

fn cmd_rates(args: RatesArgs) -> Result<(), CmdError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    let out_dir = args
        .out
        .or_else(|| cfg.outputs.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let table = sweep::run_rate_sweep(&cfg)?;
    csvio::write_rates_csv(
        &out_dir.join("rates.csv"),
        &table,
        &cfg.hash(),
        cfg.master_seed,
    )?;
    for p in &table.points {
        println!(
            "n = {:5}, m = {:4}, k = {:3}: median combined error = {:.6e}",
            p.n, p.m, p.k, p.median
        );
    }
    println!("slope = {:.4} +- {:.4}", table.slope, table.stderr);
    Ok(())
}

fn cmd_graph_eig(args: GraphEigArgs) -> Result<(), CmdError> {
    if args.mu < 1 {
        return Err(UsageError("mu must be at least 1".into()).into());
    }
    let kernel = match args.kernel.as_str() {
        "exp" => funreg::KernelG::ExpTrunc,
        "quartic" => funreg::KernelG::Quartic,
        other => return Err(UsageError(format!("unknown kernel `{other}`")).into()),
    };
    let (lap, h) = if let Some(wpath) = &args.weights {
        // fixed-graph setting: ingest W directly (symmetry checked on load)
        let w = csvio::read_matrix_csv(wpath).map_err(UsageError)?;
        (graph::laplacian_from_weights(w)?, f64::NAN)
    } else {
        let sample =
            graph::sample_manifold(funreg::Manifold::Sphere { mu: args.mu }, args.m, args.seed)?;
        let h = args
            .bandwidth
            .unwrap_or_else(|| graph::default_bandwidth(args.mu, args.m));
        (graph::build_laplacian(&sample, h, kernel)?, h)
    };
    if lap.is_fragmented() {
        eprintln!(
            "warning: graph fragmented into {} components; consider a larger bandwidth",
            lap.connected_components()
        );
    }
    let m_hi = args.m_hi.min(lap.n_vertices());
    let (eigs, slope) = lap.spectral_growth(5, m_hi)?;
    csvio::write_eigenvalues_csv(
        &args.out,
        &eigs,
        slope,
        &[
            ("mu", args.mu.to_string()),
            ("m", lap.n_vertices().to_string()),
            ("seed", args.seed.to_string()),
            ("bandwidth", format!("{h}")),
            ("components", lap.connected_components().to_string()),
        ],
    )?;
    println!(
        "mu = {}, M = {}, h = {h:.4}: slope over [5, {m_hi}] = {slope:.4} (Weyl reference {:.4})",
        args.mu,
        lap.n_vertices(),
        2.0 / args.mu as f64
    );
    Ok(())
}

fn cmd_diag(args: DiagArgs) -> Result<(), CmdError> {
    let kernel = parse_kernel(&args.kernel).map_err(UsageError)?;
    let basis = SplineBasis::make_basis(args.k, args.order, KnotRule::Uniform)?;
    let system = simdiag::diagonalize(&basis, &kernel, args.d, args.grid)?;
    let mut meta = vec![
        ("kernel", args.kernel.clone()),
        ("k", args.k.to_string()),
        ("order", args.order.to_string()),
        ("d", args.d.to_string()),
        ("grid", args.grid.to_string()),
    ];
    if args.refine {
        let rep = simdiag::refinement_report(&basis, &kernel, args.d, args.grid)?;
        meta.push((
            "refine_max_rel_gamma_change",
            format!("{}", rep.max_rel_gamma_change),
        ));
        meta.push(("refine_pbar_stable", rep.pbar_stable.to_string()));
    }
    csvio::write_gamma_csv(&args.out, system.gamma(), system.pbar(), system.cond_q(), &meta)?;
    println!(
        "K = {}, pbar = {}, cond(Q) = {:.3e}, gamma growth slope = {:.3}",
        args.k,
        system.pbar(),
        system.cond_q(),
        system.gamma_growth_check().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_selftest() -> Result<(), CmdError> {
    let outcomes = selftest::run_all();
    let mut ok = true;
    for c in &outcomes {
        println!(
            "{:<34} {}  ({})",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.detail
        );
        ok &= c.passed;
    }
    if ok {
        Ok(())
    } else {
        Err(RunError("selftest failures".into()).into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // help/version requests are success, not usage errors
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Rates(args) => cmd_rates(args),
        Command::GraphEig(args) => cmd_graph_eig(args),
        Command::Diag(args) => cmd_diag(args),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(UsageError(msg))) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Run(RunError(msg))) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
