use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use wattledger::ledger::GenesisConfig;
use wattledger::metersim::Scenario;
use wattledger_server::{router, AppState};

const DAY: i64 = 86_400_000;

fn genesis() -> GenesisConfig {
    GenesisConfig { timestamp_ms: 0, allocations: BTreeMap::from([("alice".to_string(), 10_000_000u64)]) }
}

fn app(state: AppState) -> (Router, Arc<AppState>) {
    let state = Arc::new(state.with_clock(Arc::new(|| 40 * DAY)));
    (router(state.clone()), state)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn reading(meter: &str, t: i64, va: f64, kwh: f64) -> Value {
    json!({ "meter_id": meter, "timestamp_ms": t, "v_rms": 230.0, "i_rms": va / 230.0, "apparent_power": va, "kwh_total": kwh })
}

#[tokio::test]
async fn fresh_chain_verifies() {
    let (app, _) = app(AppState::in_memory(genesis()));
    let (status, body) = call(&app, Method::GET, "/api/v1/chain/verify", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["ok"], true);
    let (_, blocks) = call(&app, Method::GET, "/api/v1/chain/blocks", None).await;
    assert_eq!(blocks.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn reading_round_trip() {
    let (app, _) = app(AppState::in_memory(genesis()));
    let r = reading("m1", 1000, 460.0, 0.5);
    let (status, body) = call(&app, Method::POST, "/api/v1/readings", Some(r.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["offset"], 0);
    let (status, latest) = call(&app, Method::GET, "/api/v1/meters/m1/latest", None).await;
    assert_eq!(status, StatusCode::OK);
    for (k, v) in r.as_object().unwrap() {
        assert_eq!(&latest[k], v, "{k}");
    }
}

#[tokio::test]
async fn ingest_errors_map_to_statuses() {
    let (app, _) = app(AppState::in_memory(genesis()));
    call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", 1000, 1.0, 0.0))).await;
    let (status, _) = call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", 1000, 1.0, 0.0))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", 2000, -1.0, 0.0))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::GET, "/api/v1/meters/ghost/latest", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/api/v1/meters/m1/series?from=5&to=1", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn series_buckets() {
    let (app, _) = app(AppState::in_memory(genesis()));
    for (i, va) in [100.0, 200.0, 300.0, 400.0].into_iter().enumerate() {
        call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", i as i64 * 30_000, va, i as f64))).await;
    }
    let (status, body) = call(&app, Method::GET, "/api/v1/meters/m1/series?from=0&to=120000&step=60000&agg=mean", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!([{ "timestamp_ms": 0, "value": 150.0 }, { "timestamp_ms": 60000, "value": 350.0 }]));
    let (_, body) =
        call(&app, Method::GET, "/api/v1/meters/m1/series?from=0&to=120000&step=60000&field=kwh_total", None).await;
    assert_eq!(body[1]["value"], 3.0);
}

#[tokio::test]
async fn billing_cycle_and_payment() {
    let (app, state) = app(AppState::in_memory(genesis()));
    // 100 kWh consumed during [0, 30 days).
    for (t, kwh) in [(0, 0.0), (30 * DAY, 100.0)] {
        call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", t, 500.0, kwh))).await;
    }
    let run = json!({ "period_start": 0, "period_end": 30 * DAY, "tariff": "state" });
    let (status, outcome) = call(&app, Method::POST, "/api/v1/billing/run", Some(run.clone())).await;
    assert_eq!(status, StatusCode::OK, "{outcome}");
    assert_eq!(outcome["invoices"].as_array().unwrap().len(), 1);
    assert_eq!(outcome["invoices"][0]["total_paise"], 60_900);
    assert_eq!(outcome["block"]["index"], 1);

    // Re-running is idempotent and commits nothing.
    let (_, again) = call(&app, Method::POST, "/api/v1/billing/run", Some(run)).await;
    assert_eq!(again["block"], Value::Null);

    let id = outcome["invoices"][0]["invoice_id"].as_str().unwrap().to_string();
    let uri = format!("/api/v1/invoices/{id}/pay");
    let (status, receipt) = call(&app, Method::POST, &uri, Some(json!({ "payer": "alice" }))).await;
    assert_eq!(status, StatusCode::OK, "{receipt}");
    assert_eq!(receipt["amount_paise"], 60_900);
    let (_, block) = call(&app, Method::GET, &format!("/api/v1/chain/blocks/{}", receipt["block_index"]), None).await;
    assert_eq!(block["hash"], receipt["block_hash"]);
    assert_eq!(block["transactions"][0]["tx_id"], receipt["tx_id"]);
    assert_eq!(block["transactions"][0]["gas"], receipt["gas"]);

    let (status, _) = call(&app, Method::POST, &uri, Some(json!({ "payer": "alice" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, acct) = call(&app, Method::GET, "/api/v1/accounts/alice", None).await;
    assert_eq!(acct["balance_paise"], 10_000_000 - 60_900);
    let (_, list) = call(&app, Method::GET, &format!("/api/v1/invoices?meter=m1&period=0-{}", 30 * DAY), None).await;
    assert_eq!(list[0]["status"], "paid");
    assert!(state.books.lock().chain.verify().is_ok());
}

#[tokio::test]
async fn billing_errors() {
    let (app, _) = app(AppState::in_memory(genesis()));
    let open = json!({ "period_start": 0, "period_end": 50 * DAY, "tariff": "state" });
    let (status, _) = call(&app, Method::POST, "/api/v1/billing/run", Some(open)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let bad = json!({ "period_start": 0, "period_end": DAY, "tariff": "nope" });
    let (status, _) = call(&app, Method::POST, "/api/v1/billing/run", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, "/api/v1/invoices/inv-x/pay", Some(json!({ "payer": "a" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn insufficient_balance_is_422() {
    let (app, _) = app(AppState::in_memory(genesis()));
    for (t, kwh) in [(0, 0.0), (DAY, 10.0)] {
        call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", t, 1.0, kwh))).await;
    }
    let run = json!({ "period_start": 0, "period_end": DAY, "tariff": "state" });
    let (_, outcome) = call(&app, Method::POST, "/api/v1/billing/run", Some(run)).await;
    let id = outcome["invoices"][0]["invoice_id"].as_str().unwrap();
    let (status, _) = call(&app, Method::POST, &format!("/api/v1/invoices/{id}/pay"), Some(json!({ "payer": "bob" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn goal_round_trip() {
    let (app, _) = app(AppState::in_memory(genesis()));
    for (t, kwh) in [(30 * DAY, 0.0), (40 * DAY, 60.0)] {
        call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", t, 1.0, kwh))).await;
    }
    let body = json!({ "kwh_target": 100.0, "period_start": 30 * DAY, "period_end": 50 * DAY });
    let (status, goal) = call(&app, Method::PUT, "/api/v1/meters/m1/goal", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(goal["kwh_target"], 100.0);
    let (status, p) = call(&app, Method::GET, "/api/v1/meters/m1/goal/progress", None).await;
    assert_eq!(status, StatusCode::OK, "{p}");
    assert_eq!(p["kwh_used"], 60.0);
    assert_eq!(p["projected_kwh"], 120.0);
    assert_eq!(p["projected_overshoot"], true);
    let (status, _) = call(&app, Method::GET, "/api/v1/meters/m2/goal/progress", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn peaks_over_threshold() {
    let (app, _) = app(AppState::in_memory(genesis()));
    for (m, va) in [("a", 600.0), ("b", 500.0)] {
        call(&app, Method::POST, "/api/v1/readings", Some(reading(m, 0, va, 0.0))).await;
        call(&app, Method::POST, "/api/v1/readings", Some(reading(m, 60_000, 100.0, 0.0))).await;
    }
    let (status, events) = call(&app, Method::GET, "/api/v1/peaks?threshold=1000&from=0&to=120000&step=60000", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(events, json!([{ "timestamp_ms": 0, "aggregate_power_va": 1100.0, "threshold_va": 1000.0 }]));
}

#[tokio::test]
async fn relay_without_and_with_simulator() {
    let (app_plain, _) = app(AppState::in_memory(genesis()));
    let (status, _) = call(&app_plain, Method::POST, "/api/v1/meters/m1/relay", Some(json!({ "on": false }))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);

    let scenario = Scenario::from_json(
        r#"{"seed": 1, "interval_ms": 1000, "duration_ms": 0,
            "meters": [{"meter_id": "m1", "profile": {"name": "kettle", "rated_power": 1000.0, "power_factor": 1.0}}]}"#,
    )
    .unwrap();
    let (app_sim, state) = app(AppState::in_memory(genesis()).with_fleet(scenario.fleet().unwrap()));
    let (status, body) = call(&app_sim, Method::POST, "/api/v1/meters/m1/relay", Some(json!({ "on": false }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["on"], false);
    let r = state.fleet.as_ref().unwrap().lock().step(1).unwrap();
    assert_eq!(r[0].i_rms, 0.0);
    let (status, _) = call(&app_sim, Method::POST, "/api/v1/meters/zz/relay", Some(json!({ "on": true }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn forecast_rows() {
    let (app, _) = app(AppState::in_memory(genesis()));
    let mut kwh = 0.0;
    for i in 0..=(3 * 24) {
        let t = i * 3_600_000;
        let va = 500.0 + 100.0 * ((i % 24) as f64 / 24.0 * std::f64::consts::TAU).sin();
        kwh += va / 1000.0;
        call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", t, va, kwh))).await;
    }
    let uri = format!("/api/v1/forecast/m1?horizon_hours=6&step_ms=3600000&now_ms={}", 3 * DAY + 1);
    let (status, rows) = call(&app, Method::GET, &uri, None).await;
    assert_eq!(status, StatusCode::OK, "{rows}");
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0]["ds"], 3 * DAY + 3_600_000);
    for key in ["yhat", "trend", "seasonal", "holiday", "regressor"] {
        assert!(rows[0][key].is_number(), "{key}");
    }
    let (status, _) = call(&app, Method::GET, "/api/v1/forecast/ghost", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn data_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (app, state) = app(AppState::open(dir.path(), genesis()).unwrap());
        call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", 0, 10.0, 0.0))).await;
        call(&app, Method::POST, "/api/v1/readings", Some(reading("m1", DAY, 10.0, 5.0))).await;
        let run = json!({ "period_start": 0, "period_end": DAY, "tariff": "private" });
        call(&app, Method::POST, "/api/v1/billing/run", Some(run)).await;
        state.flush().unwrap();
    }
    let (app, _) = app(AppState::open(dir.path(), GenesisConfig::default()).unwrap());
    let (_, latest) = call(&app, Method::GET, "/api/v1/meters/m1/latest", None).await;
    assert_eq!(latest["kwh_total"], 5.0);
    let (_, blocks) = call(&app, Method::GET, "/api/v1/chain/blocks", None).await;
    assert_eq!(blocks.as_array().unwrap().len(), 2);
    let (_, list) = call(&app, Method::GET, "/api/v1/invoices", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
    let (_, acct) = call(&app, Method::GET, "/api/v1/accounts/alice", None).await;
    assert_eq!(acct["balance_paise"], 10_000_000);
}
