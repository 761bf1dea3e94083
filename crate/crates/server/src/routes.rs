use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use wattledger::billing::{aggregate_power, detect_peaks, Period};
use wattledger::forecast::usage::HOUR_MS;
use wattledger::forecast::{forecast_meter, UsageForecast};
use wattledger::ingest::{Field, SeriesQuery};
use wattledger::metersim::MeterReading;
use wattledger::series::Agg;

use crate::{ApiError, AppState};

type Shared = Arc<AppState>;
type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Shared) -> Router {
    let api = Router::new()
        .route("/readings", post(submit_reading))
        .route("/meters", get(list_meters))
        .route("/meters/{id}/latest", get(latest))
        .route("/meters/{id}/series", get(series))
        .route("/meters/{id}/relay", post(relay))
        .route("/meters/{id}/goal", put(set_goal))
        .route("/meters/{id}/goal/progress", get(goal_progress))
        .route("/chain/blocks", get(blocks))
        .route("/chain/blocks/{index}", get(block))
        .route("/chain/verify", get(verify))
        .route("/accounts/{id}", get(account))
        .route("/invoices", get(invoices))
        .route("/invoices/{id}/pay", post(pay))
        .route("/billing/run", post(run_billing))
        .route("/peaks", get(peaks))
        .route("/forecast/{meter}", get(forecast));
    Router::new().nest("/api/v1", api).with_state(state)
}

fn parse<T: std::str::FromStr<Err = String>>(value: Option<&str>, default: T) -> Result<T, ApiError> {
    value.map_or(Ok(default), |s| s.parse().map_err(ApiError::bad_request))
}

async fn submit_reading(State(s): State<Shared>, Json(reading): Json<MeterReading>) -> ApiResult<Value> {
    let offset = s.store.submit(reading)?;
    Ok(Json(json!({ "offset": offset })))
}

async fn list_meters(State(s): State<Shared>) -> Json<Vec<String>> {
    Json(s.store.meter_ids())
}

async fn latest(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    let record = s.store.latest(&id)?;
    Ok(Json(serde_json::to_value(record).expect("record serializes")))
}

#[derive(Deserialize)]
struct SeriesParams {
    from: i64,
    to: i64,
    step: Option<i64>,
    agg: Option<String>,
    field: Option<String>,
}

#[derive(Serialize)]
struct Point {
    timestamp_ms: i64,
    value: Option<f64>,
}

async fn series(State(s): State<Shared>, Path(id): Path<String>, Query(p): Query<SeriesParams>) -> ApiResult<Vec<Point>> {
    let field: Field = parse(p.field.as_deref(), Field::ApparentPower)?;
    let mut query = SeriesQuery::new(id, p.from, p.to).field(field);
    if let Some(step) = p.step {
        // Cumulative energy is summarised by its bucket maximum unless asked otherwise.
        let default_agg = if field == Field::KwhTotal { Agg::Max } else { Agg::Mean };
        query = query.step(step, parse(p.agg.as_deref(), default_agg)?);
    } else if p.agg.is_some() {
        return Err(ApiError::bad_request("agg requires step"));
    }
    let ts = s.store.query_series(&query)?;
    Ok(Json(ts.iter().map(|(timestamp_ms, value)| Point { timestamp_ms, value }).collect()))
}

#[derive(Deserialize)]
struct RelayBody {
    on: bool,
}

async fn relay(State(s): State<Shared>, Path(id): Path<String>, Json(body): Json<RelayBody>) -> ApiResult<Value> {
    let fleet = s
        .fleet
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no simulator attached"))?;
    let on = fleet.lock().set_relay(&id, body.on)?;
    Ok(Json(json!({ "meter_id": id, "on": on })))
}

async fn blocks(State(s): State<Shared>) -> Json<Value> {
    let books = s.books.lock();
    Json(serde_json::to_value(books.chain.blocks()).expect("blocks serialize"))
}

async fn block(State(s): State<Shared>, Path(index): Path<u64>) -> ApiResult<Value> {
    let books = s.books.lock();
    let block = books.chain.block(index).ok_or_else(|| ApiError::not_found(format!("no block {index}")))?;
    Ok(Json(serde_json::to_value(block).expect("block serializes")))
}

async fn verify(State(s): State<Shared>) -> Json<Value> {
    let books = s.books.lock();
    Json(match books.chain.verify() {
        Ok(()) => json!({ "ok": true, "first_bad_index": null, "kind": null }),
        Err(t) => json!({ "ok": false, "first_bad_index": t.index, "kind": t.kind }),
    })
}

async fn account(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Value> {
    let books = s.books.lock();
    let balance = books.chain.balance(&id).ok_or_else(|| ApiError::not_found(format!("unknown account `{id}`")))?;
    Ok(Json(json!({ "account": id, "balance_paise": balance })))
}

/// `start-end` in epoch milliseconds.
fn parse_period(text: &str) -> Result<Period, ApiError> {
    let (a, b) = text
        .split_once('-')
        .ok_or_else(|| ApiError::bad_request(format!("period must be `start-end`, got `{text}`")))?;
    let num = |x: &str| x.trim().parse::<i64>().map_err(|e| ApiError::bad_request(format!("bad period bound `{x}`: {e}")));
    Ok(Period::new(num(a)?, num(b)?)?)
}

#[derive(Deserialize)]
struct InvoiceParams {
    meter: Option<String>,
    period: Option<String>,
}

async fn invoices(State(s): State<Shared>, Query(p): Query<InvoiceParams>) -> ApiResult<Value> {
    let period = p.period.as_deref().map(parse_period).transpose()?;
    let books = s.books.lock();
    let list = books.billing.invoices(p.meter.as_deref(), period);
    Ok(Json(serde_json::to_value(list).expect("invoices serialize")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunBody {
    period_start: i64,
    period_end: i64,
    tariff: String,
    now_ms: Option<i64>,
}

async fn run_billing(State(s): State<Shared>, Json(body): Json<RunBody>) -> ApiResult<Value> {
    let period = Period::new(body.period_start, body.period_end)?;
    let tariff = s.tariffs.get(&body.tariff)?.clone();
    let now = body.now_ms.unwrap_or_else(|| s.now());
    let mut books = s.books.lock();
    let books = &mut *books;
    let outcome = books.billing.run_billing_cycle(&s.store, &mut books.chain, period, &tariff, now)?;
    Ok(Json(serde_json::to_value(outcome).expect("outcome serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PayBody {
    payer: String,
    now_ms: Option<i64>,
}

async fn pay(State(s): State<Shared>, Path(id): Path<String>, Json(body): Json<PayBody>) -> ApiResult<Value> {
    let now = body.now_ms.unwrap_or_else(|| s.now());
    let mut books = s.books.lock();
    let books = &mut *books;
    let receipt = books.billing.pay_invoice(&mut books.chain, &id, &body.payer, now)?;
    Ok(Json(serde_json::to_value(receipt).expect("receipt serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalBody {
    kwh_target: f64,
    period_start: Option<i64>,
    period_end: Option<i64>,
}

/// Calendar month (UTC) containing `t_ms`.
fn month_of(t_ms: i64) -> Result<Period, ApiError> {
    use chrono::{Datelike, TimeZone, Utc};
    let t = Utc.timestamp_millis_opt(t_ms).single().ok_or_else(|| ApiError::bad_request("time out of range"))?;
    let start = Utc.with_ymd_and_hms(t.year(), t.month(), 1, 0, 0, 0).unwrap();
    let (y, m) = if t.month() == 12 { (t.year() + 1, 1) } else { (t.year(), t.month() + 1) };
    let end = Utc.with_ymd_and_hms(y, m, 1, 0, 0, 0).unwrap();
    Ok(Period::new(start.timestamp_millis(), end.timestamp_millis())?)
}

async fn set_goal(State(s): State<Shared>, Path(id): Path<String>, Json(body): Json<GoalBody>) -> ApiResult<Value> {
    let period = match (body.period_start, body.period_end) {
        (Some(a), Some(b)) => Period::new(a, b)?,
        (None, None) => month_of(s.now())?,
        _ => return Err(ApiError::bad_request("give both period_start and period_end or neither")),
    };
    let goal = s.books.lock().billing.set_goal(&id, period, body.kwh_target)?;
    Ok(Json(serde_json::to_value(goal).expect("goal serializes")))
}

#[derive(Deserialize)]
struct ProgressParams {
    now_ms: Option<i64>,
}

async fn goal_progress(
    State(s): State<Shared>,
    Path(id): Path<String>,
    Query(p): Query<ProgressParams>,
) -> ApiResult<Value> {
    let now = p.now_ms.unwrap_or_else(|| s.now());
    let books = s.books.lock();
    let goal = books
        .billing
        .goal_at(&id, now)
        .ok_or_else(|| ApiError::not_found(format!("no goal for `{id}` at {now}")))?;
    let progress = books.billing.goal_progress(&s.store, &id, goal.period, now)?;
    Ok(Json(serde_json::to_value(progress).expect("progress serializes")))
}

#[derive(Deserialize)]
struct PeakParams {
    threshold: f64,
    from: Option<i64>,
    to: Option<i64>,
    step: Option<i64>,
}

async fn peaks(State(s): State<Shared>, Query(p): Query<PeakParams>) -> ApiResult<Value> {
    let to = p.to.unwrap_or_else(|| s.now() + 1);
    let from = p.from.unwrap_or(to - 24 * HOUR_MS);
    let step = p.step.unwrap_or(60_000);
    let total = aggregate_power(&s.store, from, to, step)?;
    let events = detect_peaks(&total, p.threshold)?;
    Ok(Json(serde_json::to_value(events).expect("events serialize")))
}

#[derive(Deserialize)]
struct ForecastParams {
    horizon_hours: Option<i64>,
    step_ms: Option<i64>,
    now_ms: Option<i64>,
}

async fn forecast(
    State(s): State<Shared>,
    Path(meter): Path<String>,
    Query(p): Query<ForecastParams>,
) -> ApiResult<Value> {
    let mut opts = UsageForecast::default();
    if let Some(h) = p.horizon_hours {
        opts.horizon_ms = h.checked_mul(HOUR_MS).ok_or_else(|| ApiError::bad_request("horizon too large"))?;
    }
    if let Some(step) = p.step_ms {
        opts.step_ms = step;
    }
    let now = p.now_ms.unwrap_or_else(|| s.now());
    let state = s.clone();
    let (_, rows) = tokio::task::spawn_blocking(move || forecast_meter(&state.store, &meter, now, &opts))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(serde_json::to_value(rows).expect("rows serialize")))
}
