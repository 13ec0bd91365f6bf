use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nmsparse::harness::verify::{self, Scope};
use nmsparse::harness::{self, exit_code, RunConfig, EXIT_OK, EXIT_PROPERTY};
use nmsparse::{Error, Result, SparsityPattern};

#[derive(Parser)]
#[command(name = "nmsparse", version, about = "Learn N:M sparsity masks by policy gradients over per-group logits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a mask and write records, checkpoint, mask and summary.
    Train(RunArgs),
    /// Run the oracle property suites.
    Verify {
        /// algebra, probability, gradients or unbiasedness; all when omitted.
        #[arg(long)]
        scope: Option<Scope>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Estimator variance table, optimal-delta probes and residual curves.
    VarianceReport(RunArgs),
    /// Logit counts of per-position against per-mask parameterisations.
    MemoryReport {
        #[arg(long)]
        pattern: SparsityPattern,
        #[arg(long)]
        dim: usize,
        /// Also write the report to `<out>/memory.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline-match frequency and loss balance across initial logit scales.
    CSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated initial logit magnitudes.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0])]
        c_values: Vec<f64>,
    },
}

fn json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Io(e.into()))
}

fn status(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.load()?;
            if let Some(summary) = harness::cmd_train(&cfg)? {
                println!("{}", json(&summary)?);
            }
            Ok(EXIT_OK)
        }
        Command::Verify { scope, seed } => {
            let scopes = scope.map_or(Scope::ALL.to_vec(), |s| vec![s]);
            let mut failed = false;
            for s in scopes {
                for check in verify::run(s, seed)? {
                    failed |= !check.passed;
                    println!("{check}");
                }
            }
            Ok(if failed { EXIT_PROPERTY } else { EXIT_OK })
        }
        Command::VarianceReport(args) => {
            let report = harness::cmd_variance_report(&args.load()?)?;
            for row in &report.estimators {
                println!(
                    "{} {} variance_trace={} exact={} max_abs_z={:.3}",
                    status(row.unbiased),
                    row.kind,
                    row.variance_trace,
                    row.exact_variance_trace,
                    row.max_abs_z
                );
            }
            println!("{} variance_ordering", status(report.ordering_passed));
            println!("{} optimal_delta delta_star={}", status(report.optimal_delta_passed), report.optimal_delta);
            Ok(if report.passed() { EXIT_OK } else { EXIT_PROPERTY })
        }
        Command::MemoryReport { pattern, dim, out } => {
            let report = harness::cmd_memory_report(pattern, dim)?;
            let line = json(&report)?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join(harness::reports::MEMORY_FILE), format!("{line}\n"))?;
            }
            println!("{line}");
            Ok(EXIT_OK)
        }
        Command::CSweep { run, c_values } => {
            let report = harness::cmd_c_sweep(&run.load()?, &c_values)?;
            for row in &report.rows {
                println!("{}", json(row)?);
            }
            println!("{} match_frequency_monotone", status(report.monotone));
            println!("{} match_frequency_expected", status(report.matches_expected));
            Ok(if report.passed() { EXIT_OK } else { EXIT_PROPERTY })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { harness::EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
