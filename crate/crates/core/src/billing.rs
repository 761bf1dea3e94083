//! Tariff pricing, monthly billing cycles settled on the ledger, and the
//! consumption goal and peak-demand feedback helpers.
//!
//! Prices are integer paise per kWh. An invoice line is
//! `round_half_even(rate × kWh)` and the invoice total is the sum of its lines.
//! A billing cycle records each invoice on the chain as a zero-amount
//! transaction whose payload is the invoice document; money only moves when
//! the invoice is paid.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Field, IngestError, ReadingStore, SeriesQuery};
use crate::ledger::{Chain, Hash32, LedgerError, Transaction};
use crate::series::{Agg, TimeSeries};

pub const DEFAULT_UTILITY_ACCOUNT: &str = "utility";

#[derive(Debug, Error)]
pub enum BillingError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid period [{start_ms}, {end_ms})")]
    InvalidPeriod { start_ms: i64, end_ms: i64 },
    #[error("period ending {end_ms} is not closed at {now_ms}")]
    PeriodNotClosed { end_ms: i64, now_ms: i64 },
    #[error("unknown invoice `{0}`")]
    UnknownInvoice(String),
    #[error("invoice `{0}` is already paid")]
    AlreadyPaid(String),
    #[error("no goal for meter `{0}` in this period")]
    NoGoal(String),
    #[error("unknown tariff `{0}`")]
    UnknownTariff(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("billing state {path}: {reason}")]
    State { path: PathBuf, reason: String },
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
}

/// Flat per-kWh price split into named cost heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tariff {
    pub name: String,
    /// `(head_name, paise per kWh)` in invoice line order.
    pub heads: Vec<(String, u64)>,
}

impl Tariff {
    fn from_heads(name: &str, rates: [u64; 5]) -> Self {
        let names = ["cost_of_power", "employee", "interest", "depreciation", "other"];
        Tariff { name: name.into(), heads: names.iter().zip(rates).map(|(n, r)| (n.to_string(), r)).collect() }
    }

    /// State-sector distribution cost structure, Rs 6.09/kWh.
    pub fn state() -> Self {
        Self::from_heads("state", [470, 51, 41, 21, 26])
    }

    /// Private-sector distribution cost structure. Published total Rs 6.99/kWh;
    /// the heads themselves add up to Rs 7.00.
    pub fn private() -> Self {
        Self::from_heads("private", [517, 49, 57, 30, 47])
    }

    pub fn preset(name: &str) -> Result<Self, BillingError> {
        match name {
            "state" => Ok(Self::state()),
            "private" => Ok(Self::private()),
            other => Err(BillingError::UnknownTariff(other.into())),
        }
    }

    pub fn total_rate(&self) -> u64 {
        self.heads.iter().map(|(_, r)| r).sum()
    }
}

/// Named tariffs: the two built-in presets plus any loaded from a JSON array file.
#[derive(Debug, Clone)]
pub struct TariffBook {
    tariffs: BTreeMap<String, Tariff>,
}

impl Default for TariffBook {
    fn default() -> Self {
        let tariffs = [Tariff::state(), Tariff::private()].into_iter().map(|t| (t.name.clone(), t)).collect();
        TariffBook { tariffs }
    }
}

impl TariffBook {
    pub fn with_json(mut self, text: &str) -> Result<Self, BillingError> {
        let extra: Vec<Tariff> = serde_json::from_str(text).map_err(|e| BillingError::Domain(e.to_string()))?;
        for t in extra {
            self.tariffs.insert(t.name.clone(), t);
        }
        Ok(self)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tariffs.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tariff, BillingError> {
        self.tariffs.get(name).ok_or_else(|| BillingError::UnknownTariff(name.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Period {
    pub start_ms: i64,
    pub end_ms: i64,
}

impl Period {
    pub fn new(start_ms: i64, end_ms: i64) -> Result<Self, BillingError> {
        if start_ms < end_ms {
            Ok(Period { start_ms, end_ms })
        } else {
            Err(BillingError::InvalidPeriod { start_ms, end_ms })
        }
    }

    pub fn contains(&self, t_ms: i64) -> bool {
        self.start_ms <= t_ms && t_ms < self.end_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvoiceStatus {
    Issued,
    Paid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvoiceLine {
    pub head: String,
    pub amount_paise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invoice {
    pub invoice_id: String,
    pub meter_id: String,
    pub period: Period,
    pub tariff: String,
    pub kwh_billed: f64,
    pub lines: Vec<InvoiceLine>,
    pub total_paise: u64,
    pub status: InvoiceStatus,
    #[serde(default)]
    pub issue_tx: Option<Hash32>,
    #[serde(default)]
    pub payment_tx: Option<Hash32>,
}

/// Immutable part of an invoice, hashed into ledger payloads.
#[derive(Serialize)]
struct InvoiceDocument<'a> {
    invoice_id: &'a str,
    meter_id: &'a str,
    period_start_ms: i64,
    period_end_ms: i64,
    tariff: &'a str,
    kwh_billed: f64,
    lines: &'a [InvoiceLine],
    total_paise: u64,
}

impl Invoice {
    pub fn document_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&InvoiceDocument {
            invoice_id: &self.invoice_id,
            meter_id: &self.meter_id,
            period_start_ms: self.period.start_ms,
            period_end_ms: self.period.end_ms,
            tariff: &self.tariff,
            kwh_billed: self.kwh_billed,
            lines: &self.lines,
            total_paise: self.total_paise,
        })
        .expect("invoice document serializes")
    }
}

/// Deterministic id for the invoice of `meter_id` over `period`.
pub fn invoice_id(meter_id: &str, period: Period) -> String {
    let digest = Hash32::digest(format!("{meter_id}\n{}\n{}", period.start_ms, period.end_ms).as_bytes());
    format!("inv-{}", &digest.to_hex()[..16])
}

/// Rounds to the nearest integer, ties to even, saturating at zero.
pub fn round_half_even(x: f64) -> u64 {
    x.round_ties_even().max(0.0) as u64
}

/// Prices `kwh` under `tariff`, one rounded line per cost head.
pub fn compute_invoice(kwh: f64, tariff: &Tariff, meter_id: &str, period: Period) -> Result<Invoice, BillingError> {
    if !kwh.is_finite() || kwh < 0.0 {
        return Err(BillingError::Domain(format!("kwh must be finite and >= 0, got {kwh}")));
    }
    let lines: Vec<InvoiceLine> = tariff
        .heads
        .iter()
        .map(|(head, rate)| InvoiceLine { head: head.clone(), amount_paise: round_half_even(*rate as f64 * kwh) })
        .collect();
    Ok(Invoice {
        invoice_id: invoice_id(meter_id, period),
        meter_id: meter_id.into(),
        period,
        tariff: tariff.name.clone(),
        kwh_billed: kwh,
        total_paise: lines.iter().map(|l| l.amount_paise).sum(),
        lines,
        status: InvoiceStatus::Issued,
        issue_tx: None,
        payment_tx: None,
    })
}

/// Cumulative kWh of the last reading at or before `t_ms`, or 0 without one.
pub fn kwh_at(store: &ReadingStore, meter_id: &str, t_ms: i64) -> Result<f64, IngestError> {
    Ok(store.at_or_before(meter_id, t_ms)?.map_or(0.0, |r| r.kwh_total))
}

pub fn kwh_consumed(store: &ReadingStore, meter_id: &str, period: Period) -> Result<f64, IngestError> {
    let start = kwh_at(store, meter_id, period.start_ms)?;
    let end = kwh_at(store, meter_id, period.end_ms)?;
    Ok((end - start).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRef {
    pub index: u64,
    pub hash: Hash32,
    pub gas_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleOutcome {
    pub invoices: Vec<Invoice>,
    /// Block committed by this run; `None` when every invoice already existed.
    pub block: Option<BlockRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub invoice_id: String,
    pub tx_id: Hash32,
    pub gas: u64,
    pub amount_paise: u64,
    pub block_index: u64,
    pub block_hash: Hash32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub meter_id: String,
    pub period: Period,
    pub kwh_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalProgress {
    pub meter_id: String,
    pub period: Period,
    pub kwh_target: f64,
    pub kwh_used: f64,
    pub fraction_of_target: f64,
    pub projected_kwh: f64,
    pub projected_overshoot: bool,
}

/// Linear-extrapolation projection of period usage.
pub fn project_usage(goal: &Goal, kwh_used: f64, now_ms: i64) -> GoalProgress {
    let span = (goal.period.end_ms - goal.period.start_ms) as f64;
    let elapsed = ((now_ms - goal.period.start_ms) as f64 / span).clamp(0.0, 1.0);
    let projected_kwh = if elapsed > 0.0 { kwh_used / elapsed } else { kwh_used };
    GoalProgress {
        meter_id: goal.meter_id.clone(),
        period: goal.period,
        kwh_target: goal.kwh_target,
        kwh_used,
        fraction_of_target: kwh_used / goal.kwh_target,
        projected_kwh,
        projected_overshoot: projected_kwh > goal.kwh_target,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEvent {
    pub timestamp_ms: i64,
    pub aggregate_power_va: f64,
    pub threshold_va: f64,
}

/// One event per defined sample strictly above `threshold_va`.
pub fn detect_peaks(series: &TimeSeries<f64>, threshold_va: f64) -> Result<Vec<PeakEvent>, BillingError> {
    if !(threshold_va > 0.0) || !threshold_va.is_finite() {
        return Err(BillingError::Domain(format!("threshold must be > 0, got {threshold_va}")));
    }
    Ok(series
        .defined()
        .filter(|&(_, v)| v > threshold_va)
        .map(|(timestamp_ms, aggregate_power_va)| PeakEvent { timestamp_ms, aggregate_power_va, threshold_va })
        .collect())
}

/// Fleet-wide power: per-meter bucket means summed across meters. Buckets no meter reported in are missing.
pub fn aggregate_power(store: &ReadingStore, from_ms: i64, to_ms: i64, step_ms: i64) -> Result<TimeSeries<f64>, BillingError> {
    let mut total: Option<TimeSeries<f64>> = None;
    for meter in store.meter_ids() {
        let q = SeriesQuery::new(meter, from_ms, to_ms).step(step_ms, Agg::Mean).field(Field::ApparentPower);
        let s = store.query_series(&q)?;
        total = Some(match total {
            None => s,
            Some(acc) => {
                let values = acc
                    .values()
                    .iter()
                    .zip(s.values())
                    .map(|(a, b)| match (a, b) {
                        (Some(a), Some(b)) => Some(a + b),
                        (a, b) => a.or(*b),
                    })
                    .collect();
                acc.with_values(values)
            }
        });
    }
    Ok(total.unwrap_or_default())
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct BillingState {
    invoices: BTreeMap<String, Invoice>,
    goals: Vec<Goal>,
}

/// Billing rules engine: issues invoices at period close and settles payments on the chain.
#[derive(Debug)]
pub struct BillingEngine {
    utility_account: String,
    state: BillingState,
    path: Option<PathBuf>,
}

impl Default for BillingEngine {
    fn default() -> Self {
        Self::new(DEFAULT_UTILITY_ACCOUNT)
    }
}

impl BillingEngine {
    pub fn new(utility_account: impl Into<String>) -> Self {
        BillingEngine { utility_account: utility_account.into(), state: BillingState::default(), path: None }
    }

    /// Loads (or starts) billing state persisted as a JSON file.
    pub fn open(path: impl AsRef<Path>, utility_account: impl Into<String>) -> Result<Self, BillingError> {
        let path = path.as_ref().to_path_buf();
        let state = if path.exists() {
            let text = fs::read_to_string(&path)?;
            serde_json::from_str(&text).map_err(|e| BillingError::State { path: path.clone(), reason: e.to_string() })?
        } else {
            BillingState::default()
        };
        Ok(BillingEngine { utility_account: utility_account.into(), state, path: Some(path) })
    }

    fn persist(&self) -> Result<(), BillingError> {
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(&self.state).expect("state serializes"))?;
            fs::rename(tmp, path)?;
        }
        Ok(())
    }

    pub fn utility_account(&self) -> &str {
        &self.utility_account
    }

    pub fn invoice(&self, invoice_id: &str) -> Option<&Invoice> {
        self.state.invoices.get(invoice_id)
    }

    /// Invoices filtered by meter and/or period, ordered by (period, meter).
    pub fn invoices(&self, meter_id: Option<&str>, period: Option<Period>) -> Vec<Invoice> {
        let mut out: Vec<Invoice> = self
            .state
            .invoices
            .values()
            .filter(|i| meter_id.is_none_or(|m| i.meter_id == m))
            .filter(|i| period.is_none_or(|p| i.period == p))
            .cloned()
            .collect();
        out.sort_by(|a, b| (a.period, &a.meter_id).cmp(&(b.period, &b.meter_id)));
        out
    }

    /// Issues invoices for every known meter over a closed period and commits
    /// their issue transactions in one block. Re-running returns the existing invoices.
    pub fn run_billing_cycle(
        &mut self,
        store: &ReadingStore,
        chain: &mut Chain,
        period: Period,
        tariff: &Tariff,
        now_ms: i64,
    ) -> Result<CycleOutcome, BillingError> {
        if period.end_ms > now_ms {
            return Err(BillingError::PeriodNotClosed { end_ms: period.end_ms, now_ms });
        }
        let mut outcome = Vec::new();
        let mut fresh = Vec::new();
        for meter_id in store.meter_ids() {
            let id = invoice_id(&meter_id, period);
            if let Some(existing) = self.state.invoices.get(&id) {
                outcome.push(existing.clone());
                continue;
            }
            let kwh = kwh_consumed(store, &meter_id, period)?;
            let mut invoice = compute_invoice(kwh, tariff, &meter_id, period)?;
            let tx = Transaction::new(
                format!("meter:{meter_id}"),
                self.utility_account.clone(),
                0,
                &invoice.document_bytes(),
                period.end_ms,
            );
            invoice.issue_tx = Some(tx.tx_id);
            fresh.push((invoice, tx));
        }
        let block = if fresh.is_empty() {
            None
        } else {
            let txs = fresh.iter().map(|(_, tx)| tx.clone()).collect();
            let block = chain.add_block(txs, period.end_ms)?;
            Some(BlockRef { index: block.index, hash: block.hash, gas_total: block.gas_total })
        };
        for (invoice, _) in fresh {
            self.state.invoices.insert(invoice.invoice_id.clone(), invoice.clone());
            outcome.push(invoice);
        }
        self.persist()?;
        outcome.sort_by(|a, b| a.meter_id.cmp(&b.meter_id));
        Ok(CycleOutcome { invoices: outcome, block })
    }

    /// Moves the invoice total from `payer` to the utility in a new block.
    pub fn pay_invoice(
        &mut self,
        chain: &mut Chain,
        invoice_id: &str,
        payer: &str,
        now_ms: i64,
    ) -> Result<Receipt, BillingError> {
        let invoice = self.state.invoices.get(invoice_id).ok_or_else(|| BillingError::UnknownInvoice(invoice_id.into()))?;
        if invoice.status == InvoiceStatus::Paid {
            return Err(BillingError::AlreadyPaid(invoice_id.into()));
        }
        let tx = Transaction::new(payer, self.utility_account.clone(), invoice.total_paise, &invoice.document_bytes(), now_ms);
        let (tx_id, gas, amount_paise) = (tx.tx_id, tx.gas, tx.amount_paise);
        let block = chain.add_block(vec![tx], now_ms)?;
        let receipt = Receipt {
            invoice_id: invoice_id.into(),
            tx_id,
            gas,
            amount_paise,
            block_index: block.index,
            block_hash: block.hash,
        };
        let invoice = self.state.invoices.get_mut(invoice_id).expect("checked above");
        invoice.status = InvoiceStatus::Paid;
        invoice.payment_tx = Some(tx_id);
        self.persist()?;
        Ok(receipt)
    }

    /// Sets (or replaces) the goal of a meter for a period.
    pub fn set_goal(&mut self, meter_id: &str, period: Period, kwh_target: f64) -> Result<Goal, BillingError> {
        if !(kwh_target > 0.0) || !kwh_target.is_finite() {
            return Err(BillingError::Domain(format!("kwh_target must be > 0, got {kwh_target}")));
        }
        let goal = Goal { meter_id: meter_id.into(), period, kwh_target };
        self.state.goals.retain(|g| !(g.meter_id == meter_id && g.period == period));
        self.state.goals.push(goal.clone());
        self.persist()?;
        Ok(goal)
    }

    pub fn goal(&self, meter_id: &str, period: Period) -> Option<&Goal> {
        self.state.goals.iter().find(|g| g.meter_id == meter_id && g.period == period)
    }

    /// Goal whose period contains `t_ms`, latest-starting first.
    pub fn goal_at(&self, meter_id: &str, t_ms: i64) -> Option<&Goal> {
        self.state
            .goals
            .iter()
            .filter(|g| g.meter_id == meter_id && g.period.contains(t_ms))
            .max_by_key(|g| g.period.start_ms)
    }

    pub fn goal_progress(
        &self,
        store: &ReadingStore,
        meter_id: &str,
        period: Period,
        now_ms: i64,
    ) -> Result<GoalProgress, BillingError> {
        let goal = self.goal(meter_id, period).ok_or_else(|| BillingError::NoGoal(meter_id.into()))?;
        let upto = now_ms.min(period.end_ms);
        let used = (kwh_at(store, meter_id, upto)? - kwh_at(store, meter_id, period.start_ms)?).max(0.0);
        Ok(project_usage(goal, used, now_ms))
    }
}

/// Meter-to-period map used by property checks: invoice ids are a pure function of both.
pub fn invoice_index(invoices: &[Invoice]) -> HashMap<(String, Period), String> {
    invoices.iter().map(|i| ((i.meter_id.clone(), i.period), i.invoice_id.clone())).collect()
}
