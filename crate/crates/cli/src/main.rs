use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tunsim_cli::{cmd_compare, cmd_run, compare, report, Format, RunArgs, DEFAULT_OUT, OUT_ENV};

#[derive(Parser)]
#[command(name = "tunsim", version, about = "Simulate and compare 6to4, Teredo and ISATAP tunneling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario's replications and write traces and summaries.
    Run {
        /// Scenario name (e.g. isatap-default) or path to a TOML file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        reps: Option<u32>,
        /// Base seed; replication r uses seed + r.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = OUT_ENV)]
        out: Option<PathBuf>,
    },
    /// Rank the protocols from their summary files and write the report.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, env = OUT_ENV, default_value = DEFAULT_OUT)]
        out: PathBuf,
    },
    /// Print the ranking report to stdout.
    Report {
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
        #[arg(long, num_args = 1.., required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { scenario, reps, seed, out } => {
            let r = cmd_run(&RunArgs { scenario, reps, seed, out })?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {} traces and {}", r.traces.len(), r.summary.display());
        }
        Command::Compare { summaries, baseline, out } => {
            let (c, csv) = cmd_compare(&summaries, baseline.as_deref(), &out)?;
            for w in &c.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", report(&c, Format::Table)?);
            println!("wrote {}", csv.display());
        }
        Command::Report { format, summaries, baseline } => {
            let c = compare(&summaries, baseline.as_deref())?;
            for w in &c.warnings {
                eprintln!("warning: {w}");
            }
            let f = match format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Table => Format::Table,
            };
            print!("{}", report(&c, f)?);
        }
    }
    Ok(())
}
