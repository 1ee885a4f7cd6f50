use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use frontdoor::data::{enumerate_joint, exact_counterfactual_mean, exact_f_functional};
use frontdoor::estimators::MediatorTmleOptions;
use frontdoor::simstudy::{plot_from_csv, run_config, METRICS_FILE};
use frontdoor::{DiscreteDgp, Estimation, EstimatorId, LongitudinalDataset, MonteCarloConfig, NuisanceSpec, RegimeSpec};

/// Estimation under the longitudinal front-door criterion.
#[derive(Debug, Parser)]
#[command(name = "frontdoor", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from a data-generating process.
    Simulate {
        /// `builtin:paper`, `builtin:toy-v1` or a JSON file.
        #[arg(long)]
        dgp: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV, or `-` for stdout.
        #[arg(long)]
        out: String,
    },
    /// Run one estimator on a dataset.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// Nuisance specification JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        estimator: String,
        /// Treatment regime such as `1,1`.
        #[arg(long)]
        regime: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Result JSON file, or `-` for stdout.
        #[arg(long)]
        out: Option<String>,
        /// Iteration cap for `tmle_med`.
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Convergence tolerance for `tmle_med`.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Run a Monte Carlo study from a JSON config.
    Study {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, or `-` to print metrics.csv only.
        #[arg(long)]
        out: String,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip the SVG charts.
        #[arg(long)]
        no_plots: bool,
    },
    /// Evaluate the identifying functional and the counterfactual mean.
    Oracle {
        #[arg(long)]
        dgp: String,
        #[arg(long)]
        regime: String,
        #[arg(long, value_enum, default_value_t = OracleMode::Exact)]
        mode: OracleMode,
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Redraw the charts from a metrics file.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleMode {
    Exact,
    Mc,
}

/// Invalid invocation, reported with exit code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    Usage(message.into()).into()
}

fn parse_regime(text: &str) -> Result<RegimeSpec> {
    RegimeSpec::parse(text).map_err(|e| usage(format!("--regime {text}: {e}")))
}

fn load_dgp(source: &str) -> Result<DiscreteDgp> {
    if source.starts_with("builtin:") {
        return DiscreteDgp::resolve(source).map_err(|e| usage(e.to_string()));
    }
    DiscreteDgp::resolve(source).with_context(|| format!("reading DGP {source}"))
}

fn write_output(out: &str, bytes: &[u8]) -> Result<()> {
    if out == "-" {
        io::stdout().write_all(bytes)?;
    } else {
        fs::write(out, bytes).with_context(|| format!("writing {out}"))?;
    }
    Ok(())
}

fn simulate(dgp: &str, n: usize, seed: u64, out: &str) -> Result<()> {
    if n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let data = load_dgp(dgp)?.simulate(n, seed)?;
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    write_output(out, &buf)
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    data: &Path,
    spec: &Path,
    estimator: &str,
    regime: &str,
    alpha: f64,
    out: Option<&str>,
    max_iters: usize,
    tol: f64,
) -> Result<()> {
    let id: EstimatorId = estimator.parse().map_err(|e: frontdoor::EstimateError| usage(e.to_string()))?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(usage(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    let regime = parse_regime(regime)?;
    let data = LongitudinalDataset::read_csv_path(data).with_context(|| format!("reading {}", data.display()))?;
    regime
        .check_horizon(data.horizon())
        .map_err(|e| usage(format!("--regime {regime}: {e}")))?;
    let text = fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec = NuisanceSpec::from_json(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let result = Estimation::new(&data, &spec, &regime, alpha)?
        .with_mediator_options(MediatorTmleOptions { max_iters, tol })
        .run(id)?;
    let line = result.summary_line();
    match out {
        Some("-") => {
            println!("{}", result.to_json());
            eprintln!("{line}");
        }
        Some(path) => {
            write_output(path, format!("{}\n", result.to_json()).as_bytes())?;
            println!("{line}");
        }
        None => println!("{line}"),
    }
    Ok(())
}

fn study(config: &Path, out: &str, jobs: Option<usize>, plots: bool) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = MonteCarloConfig::from_json(&text).map_err(|e| match e {
        frontdoor::StudyError::InvalidConfig(_) | frontdoor::StudyError::UnknownScenario(_) => {
            usage(format!("{}: {e}", config.display()))
        }
        other => anyhow!(other).context(format!("parsing {}", config.display())),
    })?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = jobs {
        if k == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        pool = pool.num_threads(k);
    }
    let output = pool.build()?.install(|| run_config(&cfg))?;
    if out == "-" {
        let mut buf = Vec::new();
        output.report.write_csv(&mut buf)?;
        return write_output("-", &buf);
    }
    let written = output.emit(Path::new(out), plots)?;
    let failures: usize = output.report.rows.iter().map(|r| r.failures).sum();
    eprintln!(
        "wrote {} files to {out} ({} metric rows, {failures} failed estimator runs)",
        written.len(),
        output.report.rows.len()
    );
    Ok(())
}

fn oracle(dgp: &str, regime: &str, mode: OracleMode, n: usize, seed: u64) -> Result<()> {
    let dgp = load_dgp(dgp)?;
    let regime = parse_regime(regime)?;
    regime
        .check_horizon(dgp.horizon())
        .map_err(|e| usage(format!("--regime {regime}: {e}")))?;
    match mode {
        OracleMode::Exact => {
            let joint = enumerate_joint(&dgp)?;
            let f = exact_f_functional(&joint, &regime)?;
            let cf = exact_counterfactual_mean(&dgp, &regime)?;
            println!("f_functional={f}");
            println!("counterfactual_mean={cf}");
            println!("difference={:e}", f - cf);
        }
        OracleMode::Mc => {
            if n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            let mc = dgp.simulate_ground_truth(n, seed, &regime)?;
            if let Ok(joint) = enumerate_joint(&dgp) {
                let f = exact_f_functional(&joint, &regime)?;
                println!("f_functional={f}");
                println!("counterfactual_mean_mc={mc}");
                println!("difference={:e}", f - mc);
            } else {
                println!("counterfactual_mean_mc={mc}");
            }
        }
    }
    Ok(())
}

fn plot(input: &Path, out: &Path) -> Result<()> {
    if out.as_os_str() == "-" {
        return Err(usage("plot writes three SVG files; --out must be a directory"));
    }
    if input.file_name().is_some_and(|f| f != METRICS_FILE) {
        eprintln!("note: reading metrics from {}", input.display());
    }
    let written = plot_from_csv(input, out)?;
    eprintln!("wrote {} charts to {}", written.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { dgp, n, seed, out } => simulate(&dgp, n, seed, &out),
        Command::Estimate { data, spec, estimator, regime, alpha, out, max_iters, tol } => {
            estimate(&data, &spec, &estimator, &regime, alpha, out.as_deref(), max_iters, tol)
        }
        Command::Study { config, out, jobs, no_plots } => study(&config, &out, jobs, !no_plots),
        Command::Oracle { dgp, regime, mode, n, seed } => oracle(&dgp, &regime, mode, n, seed),
        Command::Plot { input, out } => plot(&input, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
