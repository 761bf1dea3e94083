//! CSV and JSON formats for training data, holidays, predictions and models.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};

use super::features::{Holiday, MS_PER_DAY};
use super::model::{ForecastModel, PredictionRow};
use super::ForecastError;
use crate::scalar::Scalar;
use crate::series::TimeSeries;

/// Parses an ISO-8601 timestamp (RFC 3339, naive date-time taken as UTC, or a bare date).
pub fn parse_timestamp(s: &str) -> Result<i64, ForecastError> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp_millis());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp_millis());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp_millis());
    }
    Err(ForecastError::Format(format!("unrecognised timestamp {s:?}")))
}

pub fn format_timestamp(ms: i64) -> String {
    DateTime::<Utc>::from_timestamp_millis(ms)
        .map(|dt| dt.to_rfc3339_opts(SecondsFormat::AutoSi, true))
        .unwrap_or_else(|| ms.to_string())
}

/// Training data read from CSV: the `y` series plus any extra numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData<T> {
    pub series: TimeSeries<T>,
    pub regressors: BTreeMap<String, Vec<T>>,
}

fn csv_err(e: csv::Error) -> ForecastError {
    ForecastError::Format(e.to_string())
}

/// Reads `ds,y[,regressor…]`. Empty `y` cells become missing values.
pub fn read_training_csv<T: Scalar, R: Read>(reader: R) -> Result<TrainingData<T>, ForecastError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let ds_col = col("ds").ok_or_else(|| ForecastError::Format("missing ds column".into()))?;
    let y_col = col("y").ok_or_else(|| ForecastError::Format("missing y column".into()))?;
    let extra: Vec<(usize, String)> =
        headers.iter().enumerate().filter(|(i, _)| *i != ds_col && *i != y_col).map(|(i, h)| (i, h.to_string())).collect();
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut regs: BTreeMap<String, Vec<T>> = extra.iter().map(|(_, h)| (h.clone(), Vec::new())).collect();
    let number = |s: &str, line: usize| -> Result<T, ForecastError> {
        s.parse::<f64>().map(T::of).map_err(|_| ForecastError::Format(format!("line {line}: not a number: {s:?}")))
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        ts.push(parse_timestamp(&rec[ds_col])?);
        let y = &rec[y_col];
        ys.push(if y.is_empty() { None } else { Some(number(y, line)?) });
        for (c, name) in &extra {
            regs.get_mut(name).expect("column registered").push(number(&rec[*c], line)?);
        }
    }
    Ok(TrainingData { series: TimeSeries::new(ts, ys)?, regressors: regs })
}

/// Reads `holiday,ds,lower_window,upper_window`, grouping rows by holiday name.
pub fn read_holidays_csv<R: Read>(reader: R) -> Result<Vec<Holiday>, ForecastError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let name_col = col("holiday").ok_or_else(|| ForecastError::Format("missing holiday column".into()))?;
    let ds_col = col("ds").ok_or_else(|| ForecastError::Format("missing ds column".into()))?;
    let (lo_col, hi_col) = (col("lower_window"), col("upper_window"));
    let mut out: Vec<Holiday> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let window = |c: Option<usize>| -> Result<i32, ForecastError> {
            match c.map(|c| &rec[c]).filter(|s| !s.is_empty()) {
                None => Ok(0),
                Some(s) => s.parse().map_err(|_| ForecastError::Format(format!("bad window {s:?}"))),
            }
        };
        let name = rec[name_col].to_string();
        let day = parse_timestamp(&rec[ds_col])?.div_euclid(MS_PER_DAY) * MS_PER_DAY;
        let (lo, hi) = (window(lo_col)?, window(hi_col)?);
        match out.iter_mut().find(|h| h.name == name) {
            Some(h) => {
                if (h.lower_window, h.upper_window) != (lo, hi) {
                    return Err(ForecastError::Format(format!("holiday {name:?} has inconsistent windows")));
                }
                h.dates.push(day);
            }
            None => out.push(Holiday { name, dates: vec![day], lower_window: lo, upper_window: hi }),
        }
    }
    Ok(out)
}

/// Writes `ds,yhat,trend,seasonal,holiday,regressor`.
pub fn write_predictions_csv<T: Scalar, W: Write>(rows: &[PredictionRow<T>], writer: W) -> Result<(), ForecastError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ds", "yhat", "trend", "seasonal", "holiday", "regressor"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            format_timestamp(r.ds),
            r.yhat.to_string(),
            r.trend.to_string(),
            r.seasonal.to_string(),
            r.holiday.to_string(),
            r.regressor.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_model<T: Scalar>(model: &ForecastModel<T>, path: &Path) -> Result<(), ForecastError> {
    let json = serde_json::to_vec_pretty(model).map_err(|e| ForecastError::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<ForecastModel<T>, ForecastError> {
    let bytes = std::fs::read(path)?;
    let model: ForecastModel<T> = serde_json::from_slice(&bytes).map_err(|e| ForecastError::Format(e.to_string()))?;
    model.config.validate()?;
    if model.deltas.len() != model.changepoints.len() {
        return Err(ForecastError::Format("deltas and changepoints differ in length".into()));
    }
    Ok(model)
}
