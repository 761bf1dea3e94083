//! Telemetry store: validated, per-meter append-only reading logs.
//!
//! Each meter owns one log. When the store is backed by a directory, every
//! accepted record is appended to `<meter_id>.ndjson` before it becomes
//! visible, and [`ReadingStore::open`] replays those files on start-up.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metersim::{MeterReading, SENSOR_MAX_CURRENT};
use crate::series::{bucketize, Agg, SeriesError, TimeSeries};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("out-of-order reading for `{meter_id}`: {timestamp_ms} <= last stored {last_ms}")]
    Ordering { meter_id: String, last_ms: i64, timestamp_ms: i64 },
    #[error("unknown meter `{0}`")]
    NotFound(String),
    #[error("invalid query: {0}")]
    Query(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("corrupt log {path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
}

/// A stored reading with its per-meter sequence number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingRecord {
    pub meter_id: String,
    pub timestamp_ms: i64,
    pub v_rms: f64,
    pub i_rms: f64,
    pub apparent_power: f64,
    pub kwh_total: f64,
    pub store_offset: u64,
}

impl ReadingRecord {
    pub fn reading(&self) -> MeterReading {
        MeterReading {
            meter_id: self.meter_id.clone(),
            timestamp_ms: self.timestamp_ms,
            v_rms: self.v_rms,
            i_rms: self.i_rms,
            apparent_power: self.apparent_power,
            kwh_total: self.kwh_total,
        }
    }

    pub fn field(&self, field: Field) -> f64 {
        match field {
            Field::ApparentPower => self.apparent_power,
            Field::KwhTotal => self.kwh_total,
            Field::VRms => self.v_rms,
            Field::IRms => self.i_rms,
        }
    }
}

/// Reading column selectable in series queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    #[default]
    ApparentPower,
    KwhTotal,
    VRms,
    IRms,
}

impl std::str::FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "apparent_power" => Ok(Field::ApparentPower),
            "kwh_total" => Ok(Field::KwhTotal),
            "v_rms" => Ok(Field::VRms),
            "i_rms" => Ok(Field::IRms),
            other => Err(format!("unknown field `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesQuery {
    pub meter_id: String,
    pub from_ms: i64,
    pub to_ms: i64,
    pub step_ms: Option<i64>,
    pub agg: Agg,
    pub field: Field,
}

impl SeriesQuery {
    pub fn new(meter_id: impl Into<String>, from_ms: i64, to_ms: i64) -> Self {
        Self { meter_id: meter_id.into(), from_ms, to_ms, step_ms: None, agg: Agg::Mean, field: Field::ApparentPower }
    }

    pub fn step(mut self, step_ms: i64, agg: Agg) -> Self {
        self.step_ms = Some(step_ms);
        self.agg = agg;
        self
    }

    pub fn field(mut self, field: Field) -> Self {
        self.field = field;
        self
    }

    fn validate(&self) -> Result<(), IngestError> {
        if self.from_ms >= self.to_ms {
            return Err(IngestError::Query(format!("from ({}) must be < to ({})", self.from_ms, self.to_ms)));
        }
        if let Some(step) = self.step_ms {
            if step <= 0 {
                return Err(IngestError::Query(format!("step must be > 0, got {step}")));
            }
        }
        Ok(())
    }
}

/// Meter ids double as file names, so they are restricted to a portable charset.
pub fn validate_meter_id(meter_id: &str) -> Result<(), IngestError> {
    let ok = !meter_id.is_empty()
        && meter_id.len() <= 128
        && meter_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !meter_id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(IngestError::Validation(format!("meter_id `{meter_id}` must be 1-128 chars of [A-Za-z0-9._-]")))
    }
}

pub fn validate_reading(r: &MeterReading) -> Result<(), IngestError> {
    validate_meter_id(&r.meter_id)?;
    let check = |name: &str, x: f64, ok: bool| {
        if x.is_finite() && ok {
            Ok(())
        } else {
            Err(IngestError::Validation(format!("{name} out of range: {x}")))
        }
    };
    check("v_rms", r.v_rms, r.v_rms >= 0.0)?;
    check("i_rms", r.i_rms, (0.0..=SENSOR_MAX_CURRENT).contains(&r.i_rms))?;
    check("apparent_power", r.apparent_power, r.apparent_power >= 0.0)?;
    check("kwh_total", r.kwh_total, r.kwh_total >= 0.0)?;
    Ok(())
}

#[derive(Debug, Default)]
struct MeterLog {
    records: Vec<ReadingRecord>,
    file: Option<File>,
}

impl MeterLog {
    fn last_timestamp(&self) -> Option<i64> {
        self.records.last().map(|r| r.timestamp_ms)
    }

    /// Index of the first record with timestamp >= `t`.
    fn lower_bound(&self, t: i64) -> usize {
        self.records.partition_point(|r| r.timestamp_ms < t)
    }
}

/// Concurrent reading store; one writer lock per meter.
#[derive(Debug, Default)]
pub struct ReadingStore {
    dir: Option<PathBuf>,
    meters: RwLock<BTreeMap<String, Arc<RwLock<MeterLog>>>>,
}

impl ReadingStore {
    /// Store that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a directory-backed store and replays its logs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, IngestError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut meters = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
            .collect();
        paths.sort();
        for path in paths {
            let Some(meter_id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
                continue;
            };
            let mut log = MeterLog::default();
            for (lineno, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |reason: String| IngestError::Corrupt { path: path.clone(), line: lineno + 1, reason };
                let rec: ReadingRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                if rec.meter_id != meter_id {
                    return Err(corrupt(format!("record for `{}` in file of `{meter_id}`", rec.meter_id)));
                }
                if rec.store_offset != log.records.len() as u64 {
                    return Err(corrupt(format!("offset {} where {} expected", rec.store_offset, log.records.len())));
                }
                if log.last_timestamp().is_some_and(|last| rec.timestamp_ms <= last) {
                    return Err(corrupt("timestamps not strictly increasing".into()));
                }
                validate_reading(&rec.reading()).map_err(|e| corrupt(e.to_string()))?;
                log.records.push(rec);
            }
            log.file = Some(OpenOptions::new().append(true).open(&path)?);
            meters.insert(meter_id, Arc::new(RwLock::new(log)));
        }
        Ok(Self { dir: Some(dir), meters: RwLock::new(meters) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn log(&self, meter_id: &str) -> Result<Arc<RwLock<MeterLog>>, IngestError> {
        self.meters.read().get(meter_id).cloned().ok_or_else(|| IngestError::NotFound(meter_id.to_string()))
    }

    fn log_or_create(&self, meter_id: &str) -> Result<Arc<RwLock<MeterLog>>, IngestError> {
        if let Some(log) = self.meters.read().get(meter_id) {
            return Ok(log.clone());
        }
        validate_meter_id(meter_id)?;
        let mut meters = self.meters.write();
        if let Some(log) = meters.get(meter_id) {
            return Ok(log.clone());
        }
        let mut log = MeterLog::default();
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{meter_id}.ndjson"));
            log.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }
        let log = Arc::new(RwLock::new(log));
        meters.insert(meter_id.to_string(), log.clone());
        Ok(log)
    }

    /// Makes a meter known without any readings.
    pub fn register(&self, meter_id: &str) -> Result<(), IngestError> {
        self.log_or_create(meter_id).map(|_| ())
    }

    pub fn meter_ids(&self) -> Vec<String> {
        self.meters.read().keys().cloned().collect()
    }

    pub fn contains(&self, meter_id: &str) -> bool {
        self.meters.read().contains_key(meter_id)
    }

    /// Validates and appends a reading; returns its offset.
    pub fn submit(&self, reading: MeterReading) -> Result<u64, IngestError> {
        validate_reading(&reading)?;
        let log = self.log_or_create(&reading.meter_id)?;
        let mut log = log.write();
        if let Some(last_ms) = log.last_timestamp() {
            if reading.timestamp_ms <= last_ms {
                return Err(IngestError::Ordering {
                    meter_id: reading.meter_id,
                    last_ms,
                    timestamp_ms: reading.timestamp_ms,
                });
            }
        }
        let offset = log.records.len() as u64;
        let rec = ReadingRecord {
            meter_id: reading.meter_id,
            timestamp_ms: reading.timestamp_ms,
            v_rms: reading.v_rms,
            i_rms: reading.i_rms,
            apparent_power: reading.apparent_power,
            kwh_total: reading.kwh_total,
            store_offset: offset,
        };
        if let Some(file) = log.file.as_mut() {
            let mut line = serde_json::to_vec(&rec).expect("record serializes");
            line.push(b'\n');
            file.write_all(&line)?;
        }
        log.records.push(rec);
        Ok(offset)
    }

    /// Most recent record; `Ok(None)` for a known meter with no readings.
    pub fn latest(&self, meter_id: &str) -> Result<Option<ReadingRecord>, IngestError> {
        Ok(self.log(meter_id)?.read().records.last().cloned())
    }

    pub fn len(&self, meter_id: &str) -> Result<usize, IngestError> {
        Ok(self.log(meter_id)?.read().records.len())
    }

    /// Records with timestamps in `[from_ms, to_ms)`.
    pub fn readings(&self, meter_id: &str, from_ms: i64, to_ms: i64) -> Result<Vec<ReadingRecord>, IngestError> {
        let log = self.log(meter_id)?;
        let log = log.read();
        let lo = log.lower_bound(from_ms);
        let hi = log.lower_bound(to_ms).max(lo);
        Ok(log.records[lo..hi].to_vec())
    }

    /// Last record at or before `t_ms`.
    pub fn at_or_before(&self, meter_id: &str, t_ms: i64) -> Result<Option<ReadingRecord>, IngestError> {
        let log = self.log(meter_id)?;
        let log = log.read();
        let idx = log.records.partition_point(|r| r.timestamp_ms <= t_ms);
        Ok(idx.checked_sub(1).map(|i| log.records[i].clone()))
    }

    /// Range query, optionally bucketed. Cumulative `kwh_total` buckets always take the max.
    pub fn query_series(&self, q: &SeriesQuery) -> Result<TimeSeries<f64>, IngestError> {
        q.validate()?;
        let records = self.readings(&q.meter_id, q.from_ms, q.to_ms)?;
        let raw = TimeSeries::from_dense(
            records.iter().map(|r| r.timestamp_ms).collect(),
            records.iter().map(|r| r.field(q.field)).collect(),
        )?;
        match q.step_ms {
            None => Ok(raw),
            Some(step) => {
                let agg = if q.field == Field::KwhTotal { Agg::Max } else { q.agg };
                Ok(bucketize(&raw, q.from_ms, q.to_ms, step, agg)?)
            }
        }
    }

    pub fn flush(&self) -> Result<(), IngestError> {
        for log in self.meters.read().values() {
            if let Some(file) = log.write().file.as_mut() {
                file.sync_data()?;
            }
        }
        Ok(())
    }
}
