use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use heat_ito::config::{Format, ScenarioConfig};
use heat_ito::golden::{golden_compare, GoldenTolerances};
use heat_ito::runner::{error_exit_code, run_suite, EXIT_CONFIG, EXIT_FAILURES, EXIT_OK, SUITES};
use heat_ito::Error;

/// Environment variable that overrides the output directory of the config.
const OUT_ENV: &str = "HEAT_ITO_OUT";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }
}

/// Verification suites for the Itô formula of the 1-D stochastic heat equation.
#[derive(Debug, Parser)]
#[command(name = "heat-ito", version)]
struct Cli {
    /// JSON scenario configuration; the bundled desk-scale config when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Suite to run (repeatable); `all` runs every suite.
    #[arg(long, value_name = "NAME")]
    suite: Vec<String>,

    /// Overrides the Monte Carlo seed of the config.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,

    /// Output directory (takes precedence over HEAT_ITO_OUT and the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long, value_enum)]
    format: Option<FormatArg>,

    /// Print the available suites and exit.
    #[arg(long)]
    list_suites: bool,

    /// Worker threads (defaults to all cores); results do not depend on it.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,

    /// Golden report to compare against; with several suites, a directory
    /// holding one golden report per suite.
    #[arg(long, value_name = "PATH")]
    golden: Option<PathBuf>,

    /// Absolute tolerance for deterministic metrics in the golden comparison.
    #[arg(long, value_name = "TOL", default_value_t = 0.0)]
    golden_tolerance: f64,

    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli) as u8)
}

fn fail(err: &Error) -> i32 {
    eprintln!("error: {err}");
    error_exit_code(err)
}

fn run(cli: Cli) -> i32 {
    if cli.list_suites {
        for s in SUITES {
            println!("{s}");
        }
        return EXIT_OK;
    }

    let mut cfg = match &cli.config {
        Some(path) => match ScenarioConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(&e),
        },
        None => ScenarioConfig::default_desk(),
    };
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    if cli.print_config {
        println!("{}", cfg.to_json());
        return EXIT_OK;
    }

    let suites: Vec<String> = if cli.suite.iter().any(|s| s == "all") {
        SUITES.iter().map(|s| s.to_string()).collect()
    } else {
        cli.suite.clone()
    };
    if suites.is_empty() {
        eprintln!("error: no suite given (use --suite NAME or --list-suites)");
        return EXIT_CONFIG;
    }
    if let Some(bad) = suites.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return fail(&Error::Config(format!("unknown suite `{bad}`")));
    }

    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not size the worker pool: {e}");
        }
    }

    let out_dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.outputs.directory.clone());
    let format = cli.format.map(Format::from).unwrap_or(cfg.outputs.format);
    let tolerances = GoldenTolerances {
        deterministic: cli.golden_tolerance,
        ..Default::default()
    };

    let mut status = EXIT_OK;
    for suite in &suites {
        let output = match run_suite(suite, &cfg) {
            Ok(o) => o,
            Err(e) => return fail(&e),
        };
        let path = match output.write(&out_dir, format) {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        let failures = output.report.failures().len();
        println!(
            "{suite}: {} rows, {failures} failed, report {}",
            output.report.rows().len(),
            path.display()
        );
        if failures > 0 {
            eprintln!("{}", output.failure_summary());
            status = EXIT_FAILURES;
        }
        if let Some(golden) = &cli.golden {
            let golden_path = if golden.is_dir() {
                output.report_path(golden, format)
            } else {
                golden.clone()
            };
            match golden_compare(&output.report, &golden_path, &tolerances) {
                Ok(diff) if diff.is_empty() => println!("{suite}: matches {}", golden_path.display()),
                Ok(diff) => {
                    eprint!("{suite}: differs from {}\n{diff}", golden_path.display());
                    status = EXIT_FAILURES;
                }
                Err(e) => return fail(&e),
            }
        }
    }
    status
}
