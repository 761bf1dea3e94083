use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use wattledger::billing::{BillingEngine, BillingError, Invoice, InvoiceStatus, Period, DEFAULT_UTILITY_ACCOUNT};
use wattledger::forecast::io::{format_timestamp, parse_timestamp, read_holidays_csv, read_training_csv, save_model, write_predictions_csv};
use wattledger::forecast::{fit, forecast_meter, prepare, ForecastError, PredictionRow, UsageForecast};
use wattledger::ingest::ReadingStore;
use wattledger::ledger::{chain_file, read_blocks, verify_blocks, Block, Chain, LedgerError};
use wattledger::metersim::{MeterReading, Scenario};
use wattledger_server::{AppState, DataDir};

use crate::config::Config;
use crate::{Failure, Format, StoreArgs};

const DEFAULT_DATA_DIR: &str = "watt-data";
const DEFAULT_PORT: u16 = 8080;

fn io_fail(e: io::Error) -> Failure {
    Failure::domain(e)
}

fn billing_fail(e: BillingError) -> Failure {
    match e {
        BillingError::UnknownTariff(_) | BillingError::InvalidPeriod { .. } => Failure::usage(e.to_string()),
        e => Failure::domain(e),
    }
}

fn forecast_fail(e: ForecastError) -> Failure {
    match e {
        ForecastError::Config(_) | ForecastError::Format(_) => Failure::usage(e.to_string()),
        e => Failure::domain(e),
    }
}

fn data_dir(cfg: &Config, args: &StoreArgs) -> PathBuf {
    args.data_dir.clone().or_else(|| cfg.data_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// Data directory of a batch command, which must already exist.
fn existing_store(cfg: &Config, args: &StoreArgs) -> Result<DataDir, Failure> {
    let dir = data_dir(cfg, args);
    let layout = DataDir::new(&dir);
    if !chain_file(layout.chain()).is_file() {
        return Err(Failure::usage(format!("no store at {} (run `watt serve` or `watt simulate --to-store` first)", dir.display())));
    }
    Ok(layout)
}

struct Books {
    store: ReadingStore,
    chain: Chain,
    billing: BillingEngine,
}

fn open_books(cfg: &Config, layout: &DataDir) -> Result<Books, Failure> {
    Ok(Books {
        store: ReadingStore::open(layout.readings()).map_err(Failure::domain)?,
        chain: Chain::open(layout.chain(), cfg.genesis()).map_err(Failure::domain)?,
        billing: BillingEngine::open(layout.billing(), DEFAULT_UTILITY_ACCOUNT).map_err(Failure::domain)?,
    })
}

fn now_ms() -> i64 {
    (wattledger_server::system_clock())()
}

/// Epoch milliseconds or an ISO-8601 timestamp.
fn parse_time(s: &str) -> Result<i64, Failure> {
    s.parse::<i64>().or_else(|_| parse_timestamp(s)).map_err(|e| Failure::usage(format!("bad time `{s}`: {e}")))
}

fn rupees(paise: u64) -> String {
    format!("{}.{:02}", paise / 100, paise % 100)
}

fn print_json<T: Serialize + ?Sized>(value: &T) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(Failure::domain)?;
    writeln!(out).map_err(io_fail)
}

fn csv_out() -> csv::Writer<io::StdoutLock<'static>> {
    csv::Writer::from_writer(io::stdout().lock())
}

fn csv_fail(e: csv::Error) -> Failure {
    Failure::domain(e)
}

pub fn simulate(
    scenario_path: &Path,
    out: Option<PathBuf>,
    url: Option<String>,
    store: Option<StoreArgs>,
    cfg: &Config,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(scenario_path)
        .map_err(|e| Failure::usage(format!("{}: {e}", scenario_path.display())))?;
    let scenario = Scenario::from_json(&text).map_err(|e| Failure::usage(e.to_string()))?;

    if let Some(base) = url {
        let client = reqwest::blocking::Client::new();
        let endpoint = format!("{}/api/v1/readings", base.trim_end_matches('/'));
        return scenario.run(|r: MeterReading| -> Result<(), Failure> {
            let body = serde_json::to_string(&r).expect("reading serializes");
            let res = client
                .post(&endpoint)
                .header("content-type", "application/json")
                .body(body)
                .send()
                .map_err(|e| Failure::domain(format!("{endpoint}: {e}")))?;
            if !res.status().is_success() {
                let status = res.status();
                let detail = res.text().unwrap_or_default();
                return Err(Failure::domain(format!("{endpoint}: {status} {detail}")));
            }
            Ok(())
        });
    }

    if let Some(args) = store {
        let layout = DataDir::new(data_dir(cfg, &args));
        let store = ReadingStore::open(layout.readings()).map_err(Failure::domain)?;
        // Create the ledger too, so the directory is a complete store for `bill`.
        Chain::open(layout.chain(), cfg.genesis()).map_err(Failure::domain)?;
        scenario.run(|r| store.submit(r).map(|_| ()).map_err(Failure::domain))?;
        return store.flush().map_err(Failure::domain);
    }

    let sink: Box<dyn Write> = match out {
        Some(path) => Box::new(File::create(&path).map_err(|e| Failure::domain(format!("{}: {e}", path.display())))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = BufWriter::new(sink);
    scenario.run(|r| {
        serde_json::to_writer(&mut sink, &r).map_err(Failure::domain)?;
        sink.write_all(b"\n").map_err(io_fail)
    })?;
    sink.flush().map_err(io_fail)
}

pub fn serve(
    cfg: &Config,
    store: StoreArgs,
    port: Option<u16>,
    host: &str,
    scenario: Option<PathBuf>,
) -> Result<(), Failure> {
    let dir = data_dir(cfg, &store);
    let port = port.or(cfg.port).unwrap_or(DEFAULT_PORT);
    let mut state = AppState::open(&dir, cfg.genesis()).map_err(Failure::domain)?.with_tariffs(cfg.tariff_book()?);
    let scenario = match scenario {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let s = Scenario::from_json(&text).map_err(|e| Failure::usage(e.to_string()))?;
            state = state.with_fleet(s.fleet().map_err(|e| Failure::usage(e.to_string()))?);
            Some(s)
        }
        None => None,
    };
    let state = Arc::new(state);
    let rt = tokio::runtime::Runtime::new().map_err(io_fail)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| Failure::domain(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(io_fail)?;
        eprintln!("watt: serving http://{addr}/api/v1 from {}", dir.display());
        if let Some(s) = scenario {
            tokio::spawn(wattledger_server::drive_fleet(state.clone(), s));
        }
        wattledger_server::serve(listener, state, shutdown_signal()).await.map_err(io_fail)
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn invoice_csv_header(heads: &[String]) -> Vec<String> {
    let mut h: Vec<String> =
        ["invoice_id", "meter_id", "period_start_ms", "period_end_ms", "tariff", "kwh_billed"].map(String::from).to_vec();
    h.extend(heads.iter().cloned());
    h.extend(["total_paise", "status"].map(String::from));
    h
}

fn invoice_csv_row(inv: &Invoice, heads: &[String]) -> Vec<String> {
    let mut row = vec![
        inv.invoice_id.clone(),
        inv.meter_id.clone(),
        inv.period.start_ms.to_string(),
        inv.period.end_ms.to_string(),
        inv.tariff.clone(),
        inv.kwh_billed.to_string(),
    ];
    for head in heads {
        let amount = inv.lines.iter().find(|l| &l.head == head).map_or(String::new(), |l| l.amount_paise.to_string());
        row.push(amount);
    }
    row.push(inv.total_paise.to_string());
    row.push(status_name(&inv.status).into());
    row
}

fn status_name(s: &InvoiceStatus) -> &'static str {
    match s {
        InvoiceStatus::Issued => "issued",
        InvoiceStatus::Paid => "paid",
    }
}

fn write_invoices(invoices: &[Invoice], fmt: Format) -> Result<(), Failure> {
    match fmt {
        Format::Json => print_json(invoices),
        Format::Csv => {
            let mut heads: Vec<String> = Vec::new();
            for line in invoices.iter().flat_map(|i| &i.lines) {
                if !heads.contains(&line.head) {
                    heads.push(line.head.clone());
                }
            }
            let mut w = csv_out();
            w.write_record(invoice_csv_header(&heads)).map_err(csv_fail)?;
            for inv in invoices {
                w.write_record(invoice_csv_row(inv, &heads)).map_err(csv_fail)?;
            }
            w.flush().map_err(io_fail)
        }
        Format::Text => {
            let mut out = io::stdout().lock();
            for inv in invoices {
                writeln!(
                    out,
                    "{}  {}  {}..{}  {}  {:.3} kWh  Rs {}  {}",
                    inv.invoice_id,
                    inv.meter_id,
                    inv.period.start_ms,
                    inv.period.end_ms,
                    inv.tariff,
                    inv.kwh_billed,
                    rupees(inv.total_paise),
                    status_name(&inv.status)
                )
                .map_err(io_fail)?;
                for line in &inv.lines {
                    writeln!(out, "    {:<14} Rs {:>10}", line.head, rupees(line.amount_paise)).map_err(io_fail)?;
                }
            }
            Ok(())
        }
    }
}

pub fn bill(
    cfg: &Config,
    store: StoreArgs,
    start: &str,
    end: &str,
    tariff: &str,
    at: Option<i64>,
    fmt: Format,
) -> Result<(), Failure> {
    let period = Period::new(parse_time(start)?, parse_time(end)?).map_err(billing_fail)?;
    let tariff = cfg.tariff_book()?.get(tariff).map_err(billing_fail)?.clone();
    let layout = existing_store(cfg, &store)?;
    let mut books = open_books(cfg, &layout)?;
    let outcome = books
        .billing
        .run_billing_cycle(&books.store, &mut books.chain, period, &tariff, at.unwrap_or_else(now_ms))
        .map_err(billing_fail)?;
    books.chain.flush().map_err(Failure::domain)?;
    match fmt {
        Format::Json => print_json(&outcome),
        Format::Csv => write_invoices(&outcome.invoices, fmt),
        Format::Text => {
            write_invoices(&outcome.invoices, fmt)?;
            match &outcome.block {
                Some(b) => println!("block {} {} gas {}", b.index, b.hash, b.gas_total),
                None => println!("no new block (all invoices already issued)"),
            }
            Ok(())
        }
    }
}

pub fn pay(
    cfg: &Config,
    store: StoreArgs,
    invoice_id: &str,
    payer: &str,
    at: Option<i64>,
    fmt: Format,
) -> Result<(), Failure> {
    let layout = existing_store(cfg, &store)?;
    let mut books = open_books(cfg, &layout)?;
    let receipt = books
        .billing
        .pay_invoice(&mut books.chain, invoice_id, payer, at.unwrap_or_else(now_ms))
        .map_err(billing_fail)?;
    books.chain.flush().map_err(Failure::domain)?;
    match fmt {
        Format::Json => print_json(&receipt),
        Format::Csv => {
            let mut w = csv_out();
            w.serialize(&receipt).map_err(csv_fail)?;
            w.flush().map_err(io_fail)
        }
        Format::Text => {
            println!("paid {} Rs {}", receipt.invoice_id, rupees(receipt.amount_paise));
            println!("tx {} gas {}", receipt.tx_id, receipt.gas);
            println!("block {} {}", receipt.block_index, receipt.block_hash);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    ok: bool,
    blocks: usize,
    first_bad_index: Option<u64>,
    kind: Option<String>,
}

pub fn ledger_verify(cfg: &Config, store: StoreArgs, fmt: Format) -> Result<(), Failure> {
    let layout = existing_store(cfg, &store)?;
    let report = match read_blocks(chain_file(layout.chain())) {
        Ok(blocks) => match verify_blocks(&blocks) {
            Ok(()) => VerifyReport { ok: true, blocks: blocks.len(), first_bad_index: None, kind: None },
            Err(t) => VerifyReport {
                ok: false,
                blocks: blocks.len(),
                first_bad_index: Some(t.index),
                kind: Some(serde_json::to_value(t.kind).expect("kind serializes").as_str().unwrap_or("").into()),
            },
        },
        // A record that no longer parses is itself evidence of tampering; line n holds block n-1.
        Err(LedgerError::Corrupt { line, .. }) => VerifyReport {
            ok: false,
            blocks: 0,
            first_bad_index: Some(line as u64 - 1),
            kind: Some("unreadable".into()),
        },
        Err(e) => return Err(Failure::domain(e)),
    };
    match fmt {
        Format::Json => print_json(&report)?,
        Format::Csv => {
            let mut w = csv_out();
            w.serialize(&report).map_err(csv_fail)?;
            w.flush().map_err(io_fail)?;
        }
        Format::Text => match (report.ok, report.first_bad_index) {
            (true, _) => println!("ok ({} blocks)", report.blocks),
            (false, Some(i)) => println!("tampered: first bad block {i} ({})", report.kind.as_deref().unwrap_or("")),
            (false, None) => unreachable!("failure always names a block"),
        },
    }
    if report.ok {
        Ok(())
    } else {
        Err(Failure { code: 1, message: format!("ledger verification failed at block {}", report.first_bad_index.unwrap_or(0)) })
    }
}

pub fn ledger_show(cfg: &Config, store: StoreArgs, fmt: Format) -> Result<(), Failure> {
    let layout = existing_store(cfg, &store)?;
    let blocks: Vec<Block> = read_blocks(chain_file(layout.chain())).map_err(Failure::domain)?;
    match fmt {
        Format::Json => print_json(&blocks),
        Format::Csv => {
            let mut w = csv_out();
            w.write_record(["index", "timestamp_ms", "prev_hash", "tx_count", "gas_total", "hash"]).map_err(csv_fail)?;
            for b in &blocks {
                w.write_record([
                    b.index.to_string(),
                    b.timestamp_ms.to_string(),
                    b.prev_hash.to_string(),
                    b.transactions.len().to_string(),
                    b.gas_total.to_string(),
                    b.hash.to_string(),
                ])
                .map_err(csv_fail)?;
            }
            w.flush().map_err(io_fail)
        }
        Format::Text => {
            let mut out = io::stdout().lock();
            for b in &blocks {
                writeln!(out, "block {}  {}  {}", b.index, format_timestamp(b.timestamp_ms), b.hash).map_err(io_fail)?;
                writeln!(out, "  prev {}  gas {}", b.prev_hash, b.gas_total).map_err(io_fail)?;
                for tx in &b.transactions {
                    writeln!(
                        out,
                        "  tx {}  {} -> {}  Rs {}  gas {}",
                        tx.tx_id,
                        tx.from_account,
                        tx.to_account,
                        rupees(tx.amount_paise),
                        tx.gas
                    )
                    .map_err(io_fail)?;
                }
            }
            Ok(())
        }
    }
}

pub enum ForecastSource {
    Meter(String),
    Csv { path: PathBuf, holidays: Option<PathBuf> },
}

#[allow(clippy::too_many_arguments)]
pub fn forecast(
    cfg: &Config,
    store: StoreArgs,
    source: ForecastSource,
    horizon: usize,
    step_ms: i64,
    at: Option<i64>,
    save: Option<PathBuf>,
    fmt: Format,
) -> Result<(), Failure> {
    if step_ms <= 0 {
        return Err(Failure::usage("--step-ms must be > 0"));
    }
    let (model, rows) = match source {
        ForecastSource::Meter(meter) => {
            let layout = existing_store(cfg, &store)?;
            let readings = ReadingStore::open(layout.readings()).map_err(Failure::domain)?;
            let latest = readings.latest(&meter).map_err(Failure::domain)?;
            let now = match (at, latest) {
                (Some(t), _) => t,
                (None, Some(r)) => r.timestamp_ms + 1,
                (None, None) => return Err(Failure::domain(format!("meter `{meter}` has no readings"))),
            };
            let opts = UsageForecast { horizon_ms: horizon as i64 * step_ms, step_ms, ..cfg.usage_forecast() };
            let (fit, rows) = forecast_meter(&readings, &meter, now, &opts).map_err(forecast_fail)?;
            (fit.model, rows)
        }
        ForecastSource::Csv { path, holidays } => {
            let file = File::open(&path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            let data = read_training_csv::<f64, _>(file).map_err(forecast_fail)?;
            if !data.regressors.is_empty() {
                let names: Vec<_> = data.regressors.keys().cloned().collect();
                return Err(Failure::usage(format!(
                    "training CSV has regressor columns {names:?}; their future values are unknown here"
                )));
            }
            let mut model = cfg.forecast.model.clone();
            if let Some(h) = holidays {
                let file = File::open(&h).map_err(|e| Failure::usage(format!("{}: {e}", h.display())))?;
                model.holidays = read_holidays_csv(file).map_err(forecast_fail)?;
            }
            let series = prepare(&data.series, &cfg.forecast.pipeline).map_err(forecast_fail)?.series;
            let result = fit(&model, &series, &BTreeMap::new()).map_err(forecast_fail)?;
            let times = result.model.future_times(horizon, step_ms);
            let rows = result.model.predict(&times, &BTreeMap::new()).map_err(forecast_fail)?;
            (result.model, rows)
        }
    };
    if let Some(path) = save {
        save_model(&model, &path).map_err(forecast_fail)?;
    }
    write_rows(&rows, fmt)
}

fn write_rows(rows: &[PredictionRow<f64>], fmt: Format) -> Result<(), Failure> {
    match fmt {
        Format::Json => print_json(rows),
        Format::Csv | Format::Text => {
            let mut out = io::stdout().lock();
            write_predictions_csv(rows, &mut out).map_err(forecast_fail)?;
            out.flush().map_err(io_fail)
        }
    }
}

pub fn export_readings(cfg: &Config, store: StoreArgs, meter: &str, from: i64, to: i64, fmt: Format) -> Result<(), Failure> {
    let layout = existing_store(cfg, &store)?;
    let readings = ReadingStore::open(layout.readings()).map_err(Failure::domain)?;
    let records = readings.readings(meter, from, to).map_err(Failure::domain)?;
    match fmt {
        Format::Json => print_json(&records),
        Format::Csv => {
            let mut w = csv_out();
            for r in &records {
                w.serialize(r).map_err(csv_fail)?;
            }
            w.flush().map_err(io_fail)
        }
        Format::Text => {
            let mut out = BufWriter::new(io::stdout().lock());
            for r in &records {
                serde_json::to_writer(&mut out, &r.reading()).map_err(Failure::domain)?;
                out.write_all(b"\n").map_err(io_fail)?;
            }
            out.flush().map_err(io_fail)
        }
    }
}

pub fn export_invoices(cfg: &Config, store: StoreArgs, meter: Option<&str>, fmt: Format) -> Result<(), Failure> {
    let layout = existing_store(cfg, &store)?;
    let billing = BillingEngine::open(layout.billing(), DEFAULT_UTILITY_ACCOUNT).map_err(Failure::domain)?;
    write_invoices(&billing.invoices(meter, None), fmt)
}

pub fn export_balances(cfg: &Config, store: StoreArgs, fmt: Format) -> Result<(), Failure> {
    let layout = existing_store(cfg, &store)?;
    let chain = Chain::open(layout.chain(), cfg.genesis()).map_err(Failure::domain)?;
    let balances = chain.balances();
    match fmt {
        Format::Json => print_json(balances),
        Format::Csv => {
            let mut w = csv_out();
            w.write_record(["account", "balance_paise"]).map_err(csv_fail)?;
            for (account, paise) in balances {
                w.write_record([account.clone(), paise.to_string()]).map_err(csv_fail)?;
            }
            w.flush().map_err(io_fail)
        }
        Format::Text => {
            for (account, paise) in balances {
                println!("{account}  Rs {}", rupees(*paise));
            }
            Ok(())
        }
    }
}
