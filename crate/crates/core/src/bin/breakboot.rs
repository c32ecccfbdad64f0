//! Command-line front end: simulate datasets, run Monte Carlo cells and
//! tables, and test user data.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 the
//! numerical-failure cap was exceeded.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use breakboot::bootstrap::Scheme;
use breakboot::dgp::{self, ErrorCase, Scenario, ScenarioConfig};
use breakboot::error::{Error, Result};
use breakboot::estimation::BetaSource;
use breakboot::harness::{self, DatasetTest, McConfig};
use breakboot::model::{Dataset, ModelSpec};
use breakboot::stats::{Statistic, TestSpec};

#[derive(Parser)]
#[command(name = "breakboot", version, about = "Bootstrap tests for structural breaks in 2SLS models")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one dataset and write it as CSV.
    Gen {
        #[arg(long, default_value = "h0m0")]
        scenario: Scenario,
        #[arg(long, default_value = "A")]
        case: ErrorCase,
        #[arg(long = "T", default_value_t = 240)]
        n_obs: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        g: f64,
        #[arg(long, default_value_t = 200)]
        burn_in: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rejection frequencies of a single design cell.
    Simulate(GridArgs),
    /// Rejection frequencies over a grid of cells.
    Table(GridArgs),
    /// Test a dataset read from CSV.
    Test(TestArgs),
}

/// Grid flags; each one overrides the matching key of `--config`.
#[derive(Args)]
struct GridArgs {
    /// JSON file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    scenario: Option<Vec<Scenario>>,
    #[arg(long, value_delimiter = ',')]
    case: Option<Vec<ErrorCase>>,
    #[arg(long = "T", value_delimiter = ',')]
    n_obs: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    g: Option<Vec<f64>>,
    /// Monte Carlo replications.
    #[arg(long = "N")]
    reps: Option<usize>,
    /// Bootstrap replications.
    #[arg(long = "B")]
    boot_reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long)]
    test: Option<Statistic>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    null_breaks: Option<usize>,
    #[arg(long)]
    alt_breaks: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    threads: Option<usize>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print the reduced-form break counts chosen by the pre-test.
    #[arg(long)]
    rf_report: bool,
}

#[derive(Args)]
struct TestArgs {
    /// Dataset CSV with columns y, x1.., r1...
    #[arg(long)]
    data: PathBuf,
    /// Model specification as JSON; the simulation model when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value = "supwald")]
    test: Statistic,
    #[arg(long, default_value = "wr")]
    scheme: Scheme,
    #[arg(long, default_value_t = 0)]
    null_breaks: usize,
    #[arg(long, default_value_t = 1)]
    alt_breaks: usize,
    #[arg(long, default_value_t = 0.15)]
    eps: f64,
    /// Weight scores by the full-sample fit instead of each candidate's.
    #[arg(long)]
    null_beta: bool,
    #[arg(long = "B", default_value_t = 399)]
    boot_reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.10,0.05,0.01")]
    alpha: Vec<f64>,
    #[arg(long, default_value_t = 20_240_601)]
    seed: u64,
    /// Cap of the reduced-form pre-test; 0 imposes a stable reduced form.
    #[arg(long, default_value_t = 2)]
    rf_max_breaks: usize,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

impl GridArgs {
    fn resolve(&self) -> Result<McConfig> {
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_reader(File::open(path)?).map_err(|e| Error::Parse { line: e.line(), msg: format!("{}: {e}", path.display()) })?,
            None => McConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        apply!(scenario, case, n_obs, g, reps, boot_reps, alpha, test, scheme, eps, seed, threads);
        if self.null_breaks.is_some() {
            cfg.null_breaks = self.null_breaks;
        }
        if self.alt_breaks.is_some() {
            cfg.alt_breaks = self.alt_breaks;
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run_grid(args: &GridArgs, single: bool) -> Result<()> {
    let cfg = args.resolve()?;
    let cells = cfg.cells();
    if single && cells.len() != 1 {
        return Err(Error::Config(format!("simulate runs one cell, the flags describe {}", cells.len())));
    }
    let mut results = Vec::with_capacity(cells.len());
    for cell in &cells {
        let r = harness::run_cell(&cfg, cell)?;
        if args.rf_report && cell.scenario.rf_breaks() > 0 {
            let shares = r.rf_break_shares(cfg.rf_max_breaks);
            eprintln!("{} {} T={} g={}: reduced-form breaks chosen {:?}", cell.scenario, cell.case, cell.n_obs, cell.g, shares);
        }
        results.push(r);
    }
    let mut w = output(cfg.out.as_ref())?;
    harness::write_table(&mut w, &results)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { scenario, case, n_obs, g, burn_in, seed, out } => {
            let cfg = ScenarioConfig { burn_in, ..ScenarioConfig::new(scenario, case, n_obs, g, seed) };
            let (data, _) = dgp::generate(&cfg)?;
            let mut w = output(out.as_ref())?;
            data.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Simulate(args) => run_grid(&args, true)?,
        Command::Table(args) => run_grid(&args, false)?,
        Command::Test(args) => {
            let spec = match &args.model {
                Some(p) => ModelSpec::load(p)?,
                None => ModelSpec::simulation(),
            };
            let data = Dataset::load_csv(&args.data)?;
            let opts = DatasetTest {
                test: TestSpec {
                    statistic: args.test,
                    null_breaks: args.null_breaks,
                    alt_breaks: args.alt_breaks,
                    trim: args.eps,
                    beta_source: if args.null_beta { BetaSource::Null } else { BetaSource::Alt },
                },
                scheme: args.scheme,
                boot_reps: args.boot_reps,
                alpha: args.alpha,
                seed: args.seed,
                rf_max_breaks: args.rf_max_breaks,
                ..DatasetTest::default()
            };
            let report = harness::test_dataset(&spec, &data, &opts)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{report}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Parse { .. } | Error::Json(_) => 2,
                Error::FailureCap { .. } => 3,
                _ => 1,
            })
        }
    }
}
