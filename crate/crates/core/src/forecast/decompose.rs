//! Classical additive decomposition by centered moving average.

use serde::{Deserialize, Serialize};

use super::ForecastError;
use crate::scalar::Scalar;
use crate::series::TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Decomposition<T> {
    /// Centered moving average; missing where the window runs off either edge.
    pub trend: TimeSeries<T>,
    /// Per-phase means of the detrended series, summing to zero over a period.
    pub seasonal: TimeSeries<T>,
    pub residual: TimeSeries<T>,
    /// One period of seasonal indices, phase 0 aligned with the first sample.
    pub seasonal_indices: Vec<T>,
}

/// Centered moving average of width `period`; even widths use the 2×period
/// weighting (half weight on the two outermost samples).
pub fn centered_moving_average<T: Scalar>(values: &[T], period: usize) -> Vec<Option<T>> {
    let n = values.len();
    let half = period / 2;
    let p = T::of_usize(period);
    let mut out = vec![None; n];
    if n < 2 * half + 1 {
        return out;
    }
    for (i, slot) in out.iter_mut().enumerate().take(n - half).skip(half) {
        let window = &values[i - half..=i + half];
        let avg = if period % 2 == 1 {
            window.iter().copied().sum::<T>() / p
        } else {
            let edge = (window[0] + window[window.len() - 1]) * T::of(0.5);
            (edge + window[1..window.len() - 1].iter().copied().sum::<T>()) / p
        };
        *slot = Some(avg);
    }
    out
}

/// Splits a regular, gap-free series into trend + seasonal + residual.
pub fn decompose<T: Scalar>(series: &TimeSeries<T>, period: usize) -> Result<Decomposition<T>, ForecastError> {
    if period < 2 {
        return Err(ForecastError::Config(format!("period must be >= 2, got {period}")));
    }
    let values = series.dense_values().ok_or(ForecastError::MissingValues)?;
    if values.len() < 2 * period {
        return Err(ForecastError::TooShort { needed: 2 * period, got: values.len() });
    }
    let trend = centered_moving_average(&values, period);
    let mut sums = vec![T::zero(); period];
    let mut counts = vec![0usize; period];
    for (i, (x, tr)) in values.iter().zip(&trend).enumerate() {
        if let Some(tr) = tr {
            sums[i % period] = sums[i % period] + (*x - *tr);
            counts[i % period] += 1;
        }
    }
    let means: Vec<T> = sums.iter().zip(&counts).map(|(&s, &c)| s / T::of_usize(c)).collect();
    let level = means.iter().copied().sum::<T>() / T::of_usize(period);
    let indices: Vec<T> = means.into_iter().map(|m| m - level).collect();

    let seasonal: Vec<Option<T>> = (0..values.len()).map(|i| Some(indices[i % period])).collect();
    let residual = values
        .iter()
        .zip(&trend)
        .enumerate()
        .map(|(i, (&x, tr))| tr.map(|tr| x - tr - indices[i % period]))
        .collect();
    Ok(Decomposition {
        trend: series.with_values(trend),
        seasonal: series.with_values(seasonal),
        residual: series.with_values(residual),
        seasonal_indices: indices,
    })
}
