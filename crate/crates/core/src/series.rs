//! Timestamped series with explicit gaps, and left-edge bucketing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SeriesError {
    #[error("timestamps and values differ in length ({timestamps} vs {values})")]
    LengthMismatch { timestamps: usize, values: usize },
    #[error("timestamps must strictly increase (index {0})")]
    NotIncreasing(usize),
    #[error("step must be > 0, got {0}")]
    InvalidStep(i64),
}

/// Ordered `(timestamp_ms, value)` pairs; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct TimeSeries<T> {
    timestamps: Vec<i64>,
    values: Vec<Option<T>>,
}

impl<T> Default for TimeSeries<T> {
    fn default() -> Self {
        Self { timestamps: Vec::new(), values: Vec::new() }
    }
}

impl<T: Scalar> TimeSeries<T> {
    pub fn new(timestamps: Vec<i64>, values: Vec<Option<T>>) -> Result<Self, SeriesError> {
        if timestamps.len() != values.len() {
            return Err(SeriesError::LengthMismatch { timestamps: timestamps.len(), values: values.len() });
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SeriesError::NotIncreasing(i + 1));
        }
        Ok(Self { timestamps, values })
    }

    /// Series with every value present.
    pub fn from_dense(timestamps: Vec<i64>, values: Vec<T>) -> Result<Self, SeriesError> {
        Self::new(timestamps, values.into_iter().map(Some).collect())
    }

    /// Regularly spaced series starting at `start_ms`.
    pub fn regular(start_ms: i64, step_ms: i64, values: Vec<Option<T>>) -> Result<Self, SeriesError> {
        if step_ms <= 0 {
            return Err(SeriesError::InvalidStep(step_ms));
        }
        let timestamps = (0..values.len() as i64).map(|k| start_ms + k * step_ms).collect();
        Self::new(timestamps, values)
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[Option<T>] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Option<T>)> + '_ {
        self.timestamps.iter().copied().zip(self.values.iter().copied())
    }

    pub fn defined(&self) -> impl Iterator<Item = (i64, T)> + '_ {
        self.iter().filter_map(|(t, v)| v.map(|v| (t, v)))
    }

    pub fn defined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn has_missing(&self) -> bool {
        self.values.iter().any(Option::is_none)
    }

    /// Values with gaps removed; `None` if any value is missing.
    pub fn dense_values(&self) -> Option<Vec<T>> {
        self.values.iter().copied().collect()
    }

    pub fn with_values(&self, values: Vec<Option<T>>) -> Self {
        assert_eq!(values.len(), self.len());
        Self { timestamps: self.timestamps.clone(), values }
    }

    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        self.with_values(self.values.iter().map(|v| v.map(&f)).collect())
    }

    /// Sub-series over index range.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self { timestamps: self.timestamps[range.clone()].to_vec(), values: self.values[range].to_vec() }
    }
}

/// Bucket aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agg {
    #[default]
    Mean,
    Max,
    Last,
    Sum,
}

impl std::str::FromStr for Agg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Agg::Mean),
            "max" => Ok(Agg::Max),
            "last" => Ok(Agg::Last),
            "sum" => Ok(Agg::Sum),
            other => Err(format!("unknown aggregation `{other}` (expected mean, max, last or sum)")),
        }
    }
}

impl Agg {
    /// Aggregates values given in time order. Empty input yields `None`.
    pub fn apply<T: Scalar>(self, values: &[T]) -> Option<T> {
        let (&last, _) = values.split_last()?;
        Some(match self {
            Agg::Mean => values.iter().copied().sum::<T>() / T::of_usize(values.len()),
            Agg::Max => values.iter().copied().fold(T::neg_infinity(), T::max),
            Agg::Last => last,
            Agg::Sum => values.iter().copied().sum(),
        })
    }
}

/// Left edge of the `[k·step, (k+1)·step)` bucket containing `t`.
pub fn bucket_start(t: i64, step_ms: i64) -> i64 {
    t.div_euclid(step_ms) * step_ms
}

/// Buckets the defined values of `series` that fall in `[from_ms, to_ms)`.
///
/// Output has one entry per bucket intersecting the interval, stamped with the
/// bucket's left edge; buckets without values are missing.
pub fn bucketize<T: Scalar>(
    series: &TimeSeries<T>,
    from_ms: i64,
    to_ms: i64,
    step_ms: i64,
    agg: Agg,
) -> Result<TimeSeries<T>, SeriesError> {
    if step_ms <= 0 {
        return Err(SeriesError::InvalidStep(step_ms));
    }
    if from_ms >= to_ms {
        return Ok(TimeSeries::default());
    }
    let first = bucket_start(from_ms, step_ms);
    let n_buckets = ((to_ms - 1 - first).div_euclid(step_ms) + 1) as usize;
    let mut groups: Vec<Vec<T>> = vec![Vec::new(); n_buckets];
    for (t, v) in series.defined() {
        if t >= from_ms && t < to_ms {
            groups[((t - first) / step_ms) as usize].push(v);
        }
    }
    let timestamps = (0..n_buckets as i64).map(|k| first + k * step_ms).collect();
    let values = groups.iter().map(|g| agg.apply(g)).collect();
    TimeSeries::new(timestamps, values)
}

/// Regular series spanning the buckets from the first to the last timestamp of `series`.
pub fn resample<T: Scalar>(series: &TimeSeries<T>, step_ms: i64, agg: Agg) -> Result<TimeSeries<T>, SeriesError> {
    match (series.timestamps().first(), series.timestamps().last()) {
        (Some(&first), Some(&last)) => bucketize(series, first, last + 1, step_ms, agg),
        _ if step_ms <= 0 => Err(SeriesError::InvalidStep(step_ms)),
        _ => Ok(TimeSeries::default()),
    }
}
