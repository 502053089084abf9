use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use normgd::check::{run_checks, CheckOptions, Fault, Suite};
use normgd::experiments::{
    convergence_experiment, iteration_scaling_study, slope_experiment, write_convergence,
    write_scaling, write_slope, ExperimentSpec, Model, OptimizerSettings, RadiusRule, Regime,
};
use normgd::{Algorithm, EigBackend, Error};

/// Default output root when neither `--out` nor the variable is set.
const OUT_ENV: &str = "NORMGD_OUT";
const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Parser, Debug)]
#[command(
    name = "normgd",
    version,
    about = "Normalized gradient descent experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-iteration error curves at one sample size.
    Converge(ExperimentArgs),
    /// Log-log slope of the statistical error against the sample size.
    Slope(ExperimentArgs),
    /// Iterations needed to reach the statistical radius across sample sizes.
    Scaling(ExperimentArgs),
    /// Run the oracle validation suites.
    Check(CheckArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Glm,
    Gmm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RegimeArg {
    Strong,
    Low,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long, value_enum)]
    regime: RegimeArg,
    /// Sample size for `converge`.
    #[arg(long)]
    n: Option<usize>,
    /// Link exponent (GLM only).
    #[arg(long)]
    p: Option<u32>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated true parameter.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta_star: Option<Vec<f64>>,
    /// Comma-separated subset of normgd, gd, em.
    #[arg(long, value_delimiter = ',')]
    algorithms: Option<Vec<String>>,
    /// NormGD step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Fixed-step GD step size.
    #[arg(long)]
    eta_gd: Option<f64>,
    /// Iteration cap applied to every algorithm.
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated sample sizes for `slope` and `scaling`.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Distance of the starting point from the truth.
    #[arg(long)]
    init_radius: Option<f64>,
    /// Worker threads; 0 uses all available cores.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    eig_backend: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Comma-separated suites: eig, glm, gmm, em, quad, pop, linfit, rng.
    #[arg(long, value_delimiter = ',')]
    only: Option<Vec<String>>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 1_000_000)]
    mc_draws: usize,
    #[arg(long, hide = true, value_enum)]
    inject_fault: Option<FaultArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FaultArg {
    GlmHessian,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_)
            | Error::InvalidConfig(_)
            | Error::DimensionMismatch { .. }
            | Error::UnsupportedRegime(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Converge(a) => cmd_converge(&a),
        Command::Slope(a) => cmd_slope(&a),
        Command::Scaling(a) => cmd_scaling(&a),
        Command::Check(a) => cmd_check(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn resolve_spec(a: &ExperimentArgs) -> Result<ExperimentSpec, Failure> {
    let model = match a.model {
        ModelArg::Glm => Model::Glm,
        ModelArg::Gmm => Model::Gmm,
    };
    let regime = match a.regime {
        RegimeArg::Strong => Regime::Strong,
        RegimeArg::Low => Regime::Low,
    };
    let mut spec = ExperimentSpec::replication(model, regime);
    if let Some(d) = a.d {
        spec.d = d;
        if a.theta_star.is_none() {
            spec.theta_star = match regime {
                Regime::Strong => (1..=d).map(|k| k as f64).collect(),
                Regime::Low => vec![0.0; d],
            };
        }
        spec.optimizer = OptimizerSettings::defaults(model, regime, d);
    }
    if let Some(t) = &a.theta_star {
        spec.theta_star = t.clone();
        if a.d.is_none() {
            spec.d = t.len();
            spec.optimizer.eig_backend = EigBackend::default_for(t.len());
        }
    }
    if let Some(p) = a.p {
        spec.p = p;
    }
    if let Some(s) = a.sigma {
        spec.sigma = s;
    }
    if let Some(n) = a.n {
        spec.n = n;
    }
    if let Some(g) = &a.n_grid {
        spec.n_grid = g.clone();
    }
    spec.repeats = a.repeats;
    if let Some(algs) = &a.algorithms {
        spec.algorithms = algs
            .iter()
            .map(|s| s.parse::<Algorithm>())
            .collect::<Result<_, _>>()?;
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(r) = a.init_radius {
        spec.init_radius = r;
    }
    if let Some(eta) = a.eta {
        spec.optimizer.eta_normgd = eta;
    }
    if let Some(eta) = a.eta_gd {
        spec.optimizer.eta_gd = eta;
    }
    if let Some(m) = a.max_iter {
        spec.optimizer.max_iter_normgd = m;
        spec.optimizer.max_iter_gd = m;
        spec.optimizer.max_iter_em = m;
    }
    if let Some(b) = &a.eig_backend {
        spec.optimizer.eig_backend = b.parse()?;
    }
    spec.jobs = a.jobs;
    spec.validate()?;
    Ok(spec)
}

fn out_dir(a: &ExperimentArgs, command: &str, spec: &ExperimentSpec) -> PathBuf {
    a.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
        let model = match spec.model {
            Model::Glm => "glm",
            Model::Gmm => "gmm",
        };
        let regime = match spec.regime {
            Regime::Strong => "strong",
            Regime::Low => "low",
        };
        root.join(format!("{command}_{model}_{regime}_seed{}", spec.seed))
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

fn cmd_converge(a: &ExperimentArgs) -> Result<(), Failure> {
    let spec = resolve_spec(a)?;
    let result = convergence_experiment(&spec)?;
    let dir = out_dir(a, "converge", &spec);
    write_convergence(&dir, &result)?;

    println!("algorithm\trepeats\tmean_min_error\tmean_final_error\terror_at_100");
    for alg in &spec.algorithms {
        let traces = result.traces(*alg);
        let k = traces.len() as f64;
        let mean_of = |f: &dyn Fn(&normgd::RunTrace) -> Option<f64>| -> Option<f64> {
            let vals: Vec<f64> = traces.iter().filter_map(|t| f(t)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let at_100 = result.mean_curve(*alg, 101).get(100).copied();
        println!(
            "{alg}\t{k}\t{}\t{}\t{}",
            fmt_opt(mean_of(&|t| t.min_error)),
            fmt_opt(mean_of(&|t| t.final_error())),
            fmt_opt(at_100)
        );
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_slope(a: &ExperimentArgs) -> Result<(), Failure> {
    let spec = resolve_spec(a)?;
    let results = slope_experiment(&spec)?;
    let dir = out_dir(a, "slope", &spec);
    write_slope(&dir, &spec, &results)?;

    println!("algorithm\tslope\tr2\tstatistic\texcluded_runs");
    for r in &results {
        println!(
            "{}\t{:.4}\t{:.4}\t{:?}\t{}",
            r.algorithm, r.fit.slope, r.fit.r_squared, r.statistic, r.excluded_runs
        );
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_scaling(a: &ExperimentArgs) -> Result<(), Failure> {
    let spec = resolve_spec(a)?;
    let table = iteration_scaling_study(&spec, RadiusRule::theoretical(&spec))?;
    let dir = out_dir(a, "scaling", &spec);
    write_scaling(&dir, &spec, &table)?;

    let mut algorithms = spec.algorithms.clone();
    if !algorithms.contains(&table.rule.reference) {
        algorithms.insert(0, table.rule.reference);
    }
    println!("n\talgorithm\tradius\tmedian_iterations\tcensored");
    for &n in &spec.n_grid {
        let radius = table.constant * (n as f64).powf(-table.rule.exponent);
        for alg in &algorithms {
            println!(
                "{n}\t{alg}\t{radius:.6e}\t{}\t{}",
                table
                    .median_iterations(n, *alg)
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "censored".into()),
                table.censored(n, *alg)
            );
        }
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn cmd_check(a: &CheckArgs) -> Result<(), Failure> {
    let suites = match &a.only {
        Some(names) => names
            .iter()
            .map(|s| s.parse::<Suite>())
            .collect::<Result<Vec<_>, _>>()?,
        None => Suite::ALL.to_vec(),
    };
    let opts = CheckOptions {
        suites,
        seed: a.seed,
        instances: a.instances,
        mc_draws: a.mc_draws,
        fault: a.inject_fault.map(|f| match f {
            FaultArg::GlmHessian => Fault::GlmHessianCoefficient,
        }),
        ..CheckOptions::default()
    };
    let report = run_checks(&opts)?;
    print!("{}", report.table());
    let failed: Vec<&str> = report.failures().map(|o| o.property.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}
