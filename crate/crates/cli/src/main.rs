use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qni_cli::commands::{self, CommonOptions};
use qni_cli::error::{CliError, CliResult, EXIT_OK, EXIT_RUNTIME};
use qni_cli::templates;

#[derive(Parser)]
#[command(name = "qni", version, about = "Positive-P simulator for pulsed quantum nonlinear interferometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Overrides the scenario's ensemble seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl From<Common> for CommonOptions {
    fn from(c: Common) -> Self {
        CommonOptions {
            seed: c.seed,
            workers: c.workers,
            out: c.out,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one ensemble and write time-resolved observables.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the scenario's [sweep] and write one row per point.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Matched-noise estimate: background/reference from the first file,
    /// targets from the second file's sweep.
    Estimate {
        background: PathBuf,
        targets: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the oracle checks.
    Check {
        #[arg(long, default_value_t = 1_000_000)]
        trajectories: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print a starter scenario (`cw` or `pulsed`).
    Template { name: String },
}

fn dispatch(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Run { config, common } => {
            let loaded = commands::load_config(&config)?;
            warn(&loaded.warnings);
            let report = commands::run(&loaded, &common.into())?;
            for o in &report.observables {
                let (peak, err) = o.peak().unwrap_or((f64::NAN, f64::NAN));
                println!(
                    "avg_bins={} nA={:.6e} nB={:.6e} V={:.4} V_peak={:.4}±{:.4}",
                    o.avg_bins, o.aggregate.n_a.mean, o.aggregate.n_b.mean, o.aggregate.v, peak, err
                );
            }
            Ok(EXIT_OK)
        }
        Command::Sweep { config, common } => {
            let loaded = commands::load_config(&config)?;
            warn(&loaded.warnings);
            let report = commands::sweep(&loaded, &common.into())?;
            for (v, o) in &report.points {
                println!("{}={v} V={:.4}±{:.4}", report.parameter.name(), o.aggregate.v, o.aggregate.v_err);
            }
            Ok(EXIT_OK)
        }
        Command::Estimate {
            background,
            targets,
            common,
        } => {
            let b = commands::load_config(&background)?;
            let t = commands::load_config(&targets)?;
            warn(&b.warnings);
            let report = commands::estimate(&b, &t, &common.into())?;
            println!("{}", report.cost_report());
            Ok(EXIT_OK)
        }
        Command::Check { trajectories, seed } => {
            let results = commands::check(trajectories, seed)?;
            let mut ok = true;
            for r in &results {
                let pass = r.passed();
                ok &= pass;
                println!(
                    "{} {}: expected {:.6e}, measured {:.6e}, tolerance {:.3e}",
                    if pass { "PASS" } else { "FAIL" },
                    r.name,
                    r.expected,
                    r.measured.unwrap_or(f64::NAN),
                    r.tolerance
                );
            }
            Ok(if ok { EXIT_OK } else { EXIT_RUNTIME })
        }
        Command::Template { name } => {
            let t = templates::by_name(&name)
                .ok_or_else(|| CliError::Input(format!("unknown template `{name}` (try `cw` or `pulsed`)")))?;
            print!("{t}");
            Ok(EXIT_OK)
        }
    }
}

fn warn(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
