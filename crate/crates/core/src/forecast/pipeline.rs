//! Data preparation: gap filling, outlier flagging, resampling, splitting and scaling.

use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::scalar::Scalar;
use crate::series::{self, Agg, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    ForwardFill,
    BackwardFill,
    #[default]
    LinearInterpolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierMethod {
    #[default]
    Zscore,
    Iqr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub impute_method: ImputeMethod,
    pub outlier_method: OutlierMethod,
    pub zscore_threshold: f64,
    pub iqr_multiplier: f64,
    pub resample_step_ms: Option<i64>,
    pub resample_agg: Agg,
    pub split_fraction: f64,
    pub normalize: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            impute_method: ImputeMethod::LinearInterpolation,
            outlier_method: OutlierMethod::Zscore,
            zscore_threshold: 3.0,
            iqr_multiplier: 1.5,
            resample_step_ms: None,
            resample_agg: Agg::Mean,
            split_fraction: 0.8,
            normalize: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(self.zscore_threshold > 0.0 && self.iqr_multiplier > 0.0) {
            return Err(ForecastError::Config("outlier thresholds must be > 0".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(ForecastError::Config(format!("split_fraction must lie in (0, 1), got {}", self.split_fraction)));
        }
        if self.resample_step_ms.is_some_and(|s| s <= 0) {
            return Err(ForecastError::Config("resample_step_ms must be > 0".into()));
        }
        Ok(())
    }

    fn outlier_threshold(&self) -> f64 {
        match self.outlier_method {
            OutlierMethod::Zscore => self.zscore_threshold,
            OutlierMethod::Iqr => self.iqr_multiplier,
        }
    }
}

/// Fills missing values.
///
/// Forward fill leaves a leading gap and backward fill a trailing gap. Linear
/// interpolation weights the two nearest defined neighbours by time and leaves
/// gaps at either edge untouched.
pub fn impute<T: Scalar>(series: &TimeSeries<T>, method: ImputeMethod) -> Result<TimeSeries<T>, ForecastError> {
    if !series.is_empty() && series.defined_count() == 0 {
        return Err(ForecastError::AllMissing);
    }
    let values = series.values();
    let ts = series.timestamps();
    let mut out = values.to_vec();
    match method {
        ImputeMethod::ForwardFill => {
            let mut last = None;
            for v in out.iter_mut() {
                match v {
                    Some(x) => last = Some(*x),
                    None => *v = last,
                }
            }
        }
        ImputeMethod::BackwardFill => {
            let mut next = None;
            for v in out.iter_mut().rev() {
                match v {
                    Some(x) => next = Some(*x),
                    None => *v = next,
                }
            }
        }
        ImputeMethod::LinearInterpolation => {
            let mut prev: Option<usize> = None;
            let mut i = 0;
            while i < values.len() {
                if values[i].is_some() {
                    prev = Some(i);
                    i += 1;
                    continue;
                }
                let Some(next) = (i..values.len()).find(|&j| values[j].is_some()) else { break };
                if let Some(p) = prev {
                    let (y0, y1) = (values[p].unwrap(), values[next].unwrap());
                    let span = T::of_i64(ts[next] - ts[p]);
                    for (j, slot) in out.iter_mut().enumerate().take(next).skip(i) {
                        let w = T::of_i64(ts[j] - ts[p]) / span;
                        *slot = Some(y0 + (y1 - y0) * w);
                    }
                }
                i = next;
            }
        }
    }
    Ok(series.with_values(out))
}

/// Quantile of sorted data with linear interpolation between order statistics
/// (`h = (n - 1) p`, the R-7 / spreadsheet convention).
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: f64) -> T {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * T::of(h - lo as f64)
}

/// Mean and population standard deviation.
pub fn mean_std<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = T::of_usize(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// Flags outliers among defined values; missing entries are never flagged.
///
/// `zscore` flags `|x - mean| / sigma >= threshold` with the population sigma
/// and flags nothing when sigma is zero. `iqr` flags values outside
/// `[Q1 - threshold·IQR, Q3 + threshold·IQR]`; with a zero IQR it flags every
/// value different from the median.
pub fn detect_outliers<T: Scalar>(
    series: &TimeSeries<T>,
    method: OutlierMethod,
    threshold: f64,
) -> Result<Vec<bool>, ForecastError> {
    if !(threshold > 0.0) {
        return Err(ForecastError::Config(format!("outlier threshold must be > 0, got {threshold}")));
    }
    let defined: Vec<T> = series.defined().map(|(_, v)| v).collect();
    let threshold = T::of(threshold);
    let flag: Box<dyn Fn(T) -> bool> = match method {
        OutlierMethod::Zscore => {
            if defined.len() < 2 {
                return Err(ForecastError::TooShort { needed: 2, got: defined.len() });
            }
            let (mean, std) = mean_std(&defined);
            if std == T::zero() {
                Box::new(|_| false)
            } else {
                Box::new(move |x| (x - mean).abs() / std >= threshold)
            }
        }
        OutlierMethod::Iqr => {
            if defined.len() < 4 {
                return Err(ForecastError::TooShort { needed: 4, got: defined.len() });
            }
            let mut sorted = defined.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            let q1 = quantile_sorted(&sorted, 0.25);
            let q3 = quantile_sorted(&sorted, 0.75);
            let iqr = q3 - q1;
            if iqr == T::zero() {
                let median = quantile_sorted(&sorted, 0.5);
                Box::new(move |x| x != median)
            } else {
                let (lo, hi) = (q1 - threshold * iqr, q3 + threshold * iqr);
                Box::new(move |x| x < lo || x > hi)
            }
        }
    };
    Ok(series.values().iter().map(|v| v.is_some_and(&flag)).collect())
}

/// Re-grids onto left-edge buckets; empty buckets come back missing.
pub fn resample<T: Scalar>(series: &TimeSeries<T>, step_ms: i64, agg: Agg) -> Result<TimeSeries<T>, ForecastError> {
    Ok(series::resample(series, step_ms, agg)?)
}

/// Affine scaling `(x - offset) / scale`, fitted on training data only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaling<T> {
    pub offset: T,
    pub scale: T,
}

impl<T: Scalar> Scaling<T> {
    pub fn identity() -> Self {
        Self { offset: T::zero(), scale: T::one() }
    }

    /// Min-max scaling onto `[0, 1]`; a constant sample maps to 0 with unit scale.
    pub fn min_max(values: impl IntoIterator<Item = T>) -> Self {
        let (lo, hi) = values.into_iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !lo.is_finite() {
            return Self::identity();
        }
        let span = hi - lo;
        Self { offset: lo, scale: if span > T::zero() { span } else { T::one() } }
    }

    pub fn apply(&self, x: T) -> T {
        (x - self.offset) / self.scale
    }

    pub fn invert(&self, x: T) -> T {
        x * self.scale + self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: TimeSeries<T>,
    pub test: TimeSeries<T>,
    pub scaling: Scaling<T>,
}

/// Chronological split at `split_fraction`, scaling fitted on the training part only.
pub fn split_and_normalize<T: Scalar>(series: &TimeSeries<T>, config: &PipelineConfig) -> Result<Split<T>, ForecastError> {
    config.validate()?;
    let n = series.len();
    if n < 3 {
        return Err(ForecastError::TooShort { needed: 3, got: n });
    }
    let n_train = ((n as f64 * config.split_fraction + 1e-9).floor() as usize).clamp(1, n - 1);
    let train = series.slice(0..n_train);
    let test = series.slice(n_train..n);
    let scaling = if config.normalize {
        Scaling::min_max(train.defined().map(|(_, v)| v))
    } else {
        Scaling::identity()
    };
    Ok(Split { train: train.map_values(|x| scaling.apply(x)), test: test.map_values(|x| scaling.apply(x)), scaling })
}

/// Output of [`prepare`]: a clean series plus what was done to it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared<T> {
    pub series: TimeSeries<T>,
    pub outliers_removed: usize,
}

/// Resample (if configured), drop outliers, then fill gaps. Edge gaps the
/// chosen method cannot fill are filled from the nearest defined value.
pub fn prepare<T: Scalar>(series: &TimeSeries<T>, config: &PipelineConfig) -> Result<Prepared<T>, ForecastError> {
    config.validate()?;
    let mut s = match config.resample_step_ms {
        Some(step) => resample(series, step, config.resample_agg)?,
        None => series.clone(),
    };
    let needed = match config.outlier_method {
        OutlierMethod::Zscore => 2,
        OutlierMethod::Iqr => 4,
    };
    let mut removed = 0;
    if s.defined_count() >= needed {
        let mask = detect_outliers(&s, config.outlier_method, config.outlier_threshold())?;
        removed = mask.iter().filter(|&&m| m).count();
        let values = s.values().iter().zip(&mask).map(|(v, &m)| if m { None } else { *v }).collect();
        s = s.with_values(values);
    }
    let s = impute(&s, config.impute_method)?;
    let s = impute(&s, ImputeMethod::ForwardFill)?;
    let s = impute(&s, ImputeMethod::BackwardFill)?;
    Ok(Prepared { series: s, outliers_removed: removed })
}
