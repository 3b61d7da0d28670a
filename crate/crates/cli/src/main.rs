use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixedindep_cli::commands::{
    cmd_test, render_power, render_quantiles, render_test, run_power, run_quantiles, TestOptions,
};
use mixedindep_cli::config::{load_config, PowerConfig, QuantileConfig, StatName};
use mixedindep_cli::{CliError, CliResult};
use mixedindep_core::inference::DEFAULT_PERMUTATIONS;
use mixedindep_core::{DDomain, Mode};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "mixedindep",
    version,
    about = "Independence tests for mixed continuous and count data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test independence of continuous and count columns of a CSV file.
    Test(TestArgs),
    /// Run a warp-speed power study from a config file.
    Power(StudyArgs),
    /// Estimate null quantiles of the standardized statistic.
    Quantiles(StudyArgs),
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Continuous columns, by header name or zero-based index.
    #[arg(long, value_delimiter = ',', required = true)]
    x: Vec<String>,
    /// Count columns.
    #[arg(long, value_delimiter = ',', required = true)]
    y: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "i,t,sti,d")]
    stat: Vec<String>,
    #[arg(long, default_value = "two-vector")]
    mode: Mode,
    /// Weight decay for continuous coordinates; one value or one per column.
    #[arg(long, value_delimiter = ',')]
    a: Option<Vec<f64>>,
    /// Weight power for count coordinates.
    #[arg(long, value_delimiter = ',')]
    b: Option<Vec<f64>>,
    /// Gaussian scale for the characteristic-function statistic.
    #[arg(long, value_delimiter = ',')]
    sigma: Option<Vec<f64>>,
    /// Integration domain of the characteristic-function statistic: whole or orthant.
    #[arg(long)]
    d_domain: Option<DDomain>,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    perms: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Normal p-value for st.I (used only when n >= 500).
    #[arg(long)]
    asymptotic: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    config: PathBuf,
    /// Print JSON instead of the text table.
    #[arg(long)]
    json: bool,
    /// Also write the JSON result to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("records serialize") + "\n"
}

fn emit<T: Serialize>(value: &T, text: String, args: &StudyArgs) -> CliResult<()> {
    let json = to_json(value);
    if let Some(path) = &args.out {
        std::fs::write(path, &json).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
    }
    print!("{}", if args.json { json } else { text });
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Test(args) => {
            let stats = args
                .stat
                .iter()
                .map(|s| s.parse::<StatName>())
                .collect::<CliResult<Vec<_>>>()?;
            let opts = TestOptions {
                stats,
                mode: args.mode,
                a: args.a,
                b: args.b,
                sigma: args.sigma,
                domain: args.d_domain,
                permutations: args.perms,
                seed: args.seed,
                asymptotic: args.asymptotic,
            };
            let mut notes = Vec::new();
            let records = cmd_test(&args.input, &args.x, &args.y, &opts, &mut notes)?;
            for note in notes {
                eprintln!("note: {note}");
            }
            print!(
                "{}",
                if args.json {
                    to_json(&records)
                } else {
                    render_test(&records)
                }
            );
        }
        Command::Power(args) => {
            let cfg: PowerConfig = load_config(&args.config)?;
            let records = run_power(&cfg)?;
            emit(&records, render_power(&records), &args)?;
        }
        Command::Quantiles(args) => {
            let cfg: QuantileConfig = load_config(&args.config)?;
            let report = run_quantiles(&cfg)?;
            emit(&report, render_quantiles(&report), &args)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
