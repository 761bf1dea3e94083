//! `watt`: simulate meters, serve the API, run billing, inspect the ledger and forecast demand.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "watt", version, about = "Smart-meter telemetry, billing ledger and demand forecasting")]
struct Cli {
    /// JSON config file (data_dir, port, genesis, tariffs, forecast).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(flatten)]
    store: StoreArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args, Clone)]
pub struct StoreArgs {
    /// Data directory holding readings/, chain/ and billing.json.
    #[arg(long, global = true, env = "WATT_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and stream its readings to a file, a running service or a data directory.
    Simulate {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Write NDJSON readings here.
        #[arg(long, group = "sink")]
        out: Option<PathBuf>,
        /// POST readings to this service base URL (e.g. http://127.0.0.1:8080).
        #[arg(long, group = "sink")]
        url: Option<String>,
        /// Append readings directly to the reading store under --data-dir.
        #[arg(long, group = "sink")]
        to_store: bool,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long, env = "WATT_PORT")]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Attach a live simulator driven by this scenario (enables relay control).
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Issue invoices for a closed period and commit them in one block.
    Bill {
        /// Period start, epoch ms or ISO-8601.
        #[arg(long)]
        start: String,
        /// Period end (exclusive), epoch ms or ISO-8601.
        #[arg(long)]
        end: String,
        #[arg(long, default_value = "state")]
        tariff: String,
        /// Evaluation time in epoch ms (defaults to the system clock).
        #[arg(long)]
        at: Option<i64>,
    },
    /// Pay an issued invoice from an account.
    Pay {
        invoice_id: String,
        #[arg(long)]
        payer: String,
        #[arg(long)]
        at: Option<i64>,
    },
    /// Verify or print the ledger.
    Ledger {
        #[command(subcommand)]
        action: LedgerAction,
    },
    /// Forecast demand from a stored meter or a training CSV; prints a CSV of components.
    Forecast {
        /// Meter to forecast from the reading store.
        #[arg(long, group = "source")]
        meter: Option<String>,
        /// Training CSV with columns ds,y.
        #[arg(long, group = "source")]
        input: Option<PathBuf>,
        /// Holiday CSV (holiday,ds,lower_window,upper_window), used with --input.
        #[arg(long, requires = "input")]
        holidays: Option<PathBuf>,
        /// Number of future steps.
        #[arg(long, default_value_t = 24)]
        horizon: usize,
        #[arg(long, default_value_t = 3_600_000)]
        step_ms: i64,
        /// Forecast as of this epoch ms (store mode; defaults to just after the latest reading).
        #[arg(long)]
        at: Option<i64>,
        /// Save the fitted model as JSON.
        #[arg(long)]
        save_model: Option<PathBuf>,
    },
    /// Dump stored data.
    Export {
        #[command(subcommand)]
        what: ExportWhat,
    },
}

#[derive(Subcommand)]
enum LedgerAction {
    /// Check every hash and link; exit 1 and print the first bad index on failure.
    Verify,
    /// Print the blocks.
    Show,
}

#[derive(Subcommand)]
enum ExportWhat {
    /// Raw readings of one meter.
    Readings {
        meter: String,
        #[arg(long, default_value_t = i64::MIN)]
        from: i64,
        #[arg(long, default_value_t = i64::MAX)]
        to: i64,
    },
    Invoices {
        #[arg(long)]
        meter: Option<String>,
    },
    Blocks,
    Balances,
}

/// A failed command: message for stderr plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn domain(message: impl ToString) -> Self {
        Failure { code: 1, message: message.to_string() }
    }
}

impl From<wattledger::metersim::SimError> for Failure {
    fn from(e: wattledger::metersim::SimError) -> Self {
        Failure::domain(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("watt: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = config::Config::load(cli.config.as_deref())?;
    let fmt = cli.format;
    let store = cli.store;
    match cli.command {
        Command::Simulate { scenario, out, url, to_store } => {
            commands::simulate(&scenario, out, url, to_store.then_some(store), &cfg)
        },
        Command::Serve { port, host, scenario } => commands::serve(&cfg, store, port, &host, scenario),
        Command::Bill { start, end, tariff, at } => commands::bill(&cfg, store, &start, &end, &tariff, at, fmt),
        Command::Pay { invoice_id, payer, at } => commands::pay(&cfg, store, &invoice_id, &payer, at, fmt),
        Command::Ledger { action } => match action {
            LedgerAction::Verify => commands::ledger_verify(&cfg, store, fmt),
            LedgerAction::Show => commands::ledger_show(&cfg, store, fmt),
        },
        Command::Forecast { meter, input, holidays, horizon, step_ms, at, save_model } => {
            let source = match (meter, input) {
                (Some(m), _) => commands::ForecastSource::Meter(m),
                (_, Some(p)) => commands::ForecastSource::Csv { path: p, holidays },
                _ => return Err(Failure::usage("give --meter or --input")),
            };
            commands::forecast(&cfg, store, source, horizon, step_ms, at, save_model, fmt)
        }
        Command::Export { what } => match what {
            ExportWhat::Readings { meter, from, to } => commands::export_readings(&cfg, store, &meter, from, to, fmt),
            ExportWhat::Invoices { meter } => commands::export_invoices(&cfg, store, meter.as_deref(), fmt),
            ExportWhat::Blocks => commands::ledger_show(&cfg, store, fmt),
            ExportWhat::Balances => commands::export_balances(&cfg, store, fmt),
        },
    }
}
