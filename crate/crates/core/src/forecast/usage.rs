//! Forecasts of a stored meter's demand, and goal projections built on them.

use std::collections::BTreeMap;

use super::model::{fit, FitResult, ModelConfig, PredictionRow};
use super::pipeline::{prepare, PipelineConfig};
use super::ForecastError;
use crate::billing::{kwh_at, Goal, GoalProgress};
use crate::ingest::{Field, ReadingStore, SeriesQuery};
use crate::metersim::VA_MS_PER_KWH;
use crate::series::{bucket_start, Agg};

pub const HOUR_MS: i64 = 3_600_000;

/// Options for [`forecast_meter`].
#[derive(Debug, Clone, PartialEq)]
pub struct UsageForecast {
    /// Bucket width used to resample the apparent-power history.
    pub history_step_ms: i64,
    /// How far back to look; `None` uses every stored reading.
    pub history_ms: Option<i64>,
    pub horizon_ms: i64,
    pub step_ms: i64,
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
}

impl Default for UsageForecast {
    fn default() -> Self {
        Self {
            history_step_ms: HOUR_MS,
            history_ms: None,
            horizon_ms: 24 * HOUR_MS,
            step_ms: HOUR_MS,
            model: ModelConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Fits the meter's bucketed apparent power up to `now_ms` and predicts the
/// horizon in `step_ms` increments after the last bucket.
///
/// Seasonalities whose period is more than half the available history are dropped.
pub fn forecast_meter(
    store: &ReadingStore,
    meter_id: &str,
    now_ms: i64,
    opts: &UsageForecast,
) -> Result<(FitResult<f64>, Vec<PredictionRow<f64>>), ForecastError> {
    if opts.history_step_ms <= 0 || opts.step_ms <= 0 || opts.horizon_ms < 0 {
        return Err(ForecastError::Config("steps must be > 0 and the horizon >= 0".into()));
    }
    let first = store.readings(meter_id, i64::MIN, now_ms)?.first().map(|r| r.timestamp_ms).ok_or(ForecastError::AllMissing)?;
    let from = opts.history_ms.map_or(first, |h| first.max(now_ms - h));
    let from = bucket_start(from, opts.history_step_ms);
    let query = SeriesQuery::new(meter_id, from, now_ms).step(opts.history_step_ms, Agg::Mean).field(Field::ApparentPower);
    let raw = store.query_series(&query)?;
    let prepared = prepare(&raw, &opts.pipeline)?.series;

    let mut config = opts.model.clone();
    let span_days = match (prepared.timestamps().first(), prepared.timestamps().last()) {
        (Some(a), Some(b)) => (b - a) as f64 / 86_400_000.0,
        _ => 0.0,
    };
    config.seasonalities.retain(|s| span_days >= 2.0 * s.period);
    let result = fit(&config, &prepared, &BTreeMap::new())?;
    let last = *prepared.timestamps().last().expect("fit needs at least two points");
    let count = opts.horizon_ms / opts.step_ms;
    let times: Vec<i64> = (1..=count).map(|i| last + i * opts.step_ms).collect();
    let rows = result.model.predict(&times, &BTreeMap::new())?;
    Ok((result, rows))
}

/// Goal progress whose projection adds forecast consumption for the rest of the
/// period to what has been used so far.
pub fn project_goal(
    store: &ReadingStore,
    goal: &Goal,
    now_ms: i64,
    opts: &UsageForecast,
) -> Result<GoalProgress, ForecastError> {
    let period = goal.period;
    let upto = now_ms.min(period.end_ms);
    let used = (kwh_at(store, &goal.meter_id, upto)? - kwh_at(store, &goal.meter_id, period.start_ms)?).max(0.0);
    let remaining_ms = period.end_ms - upto;
    let mut projected = used;
    if remaining_ms > 0 {
        let opts = UsageForecast { horizon_ms: remaining_ms + opts.step_ms, ..opts.clone() };
        let (_, rows) = forecast_meter(store, &goal.meter_id, upto, &opts)?;
        let future_kwh: f64 = rows
            .iter()
            .filter(|r| r.ds > upto && r.ds <= period.end_ms)
            .map(|r| r.yhat.max(0.0) * opts.step_ms as f64 / VA_MS_PER_KWH)
            .sum();
        projected += future_kwh;
    }
    Ok(GoalProgress {
        meter_id: goal.meter_id.clone(),
        period,
        kwh_target: goal.kwh_target,
        kwh_used: used,
        fraction_of_target: used / goal.kwh_target,
        projected_kwh: projected,
        projected_overshoot: projected > goal.kwh_target,
    })
}
