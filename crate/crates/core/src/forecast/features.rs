//! Regression features: changepoint grid, Fourier terms, holiday indicators.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub const MS_PER_DAY: i64 = 86_400_000;

/// `n` times evenly spaced strictly inside the first `range_fraction` of `[start, end]`.
pub fn make_changepoints<T: Scalar>(start: T, end: T, n: usize, range_fraction: T) -> Vec<T> {
    let width = (end - start) * range_fraction;
    let denom = T::of_usize(n + 1);
    (1..=n).map(|i| start + width * T::of_usize(i) / denom).collect()
}

/// `[cos(2π·1·t/P), sin(2π·1·t/P), …, cos(2π·K·t/P), sin(2π·K·t/P)]`.
pub fn fourier_features<T: Scalar>(t: T, period: T, order: usize) -> Vec<T> {
    let mut row = Vec::with_capacity(2 * order);
    fourier_into(t, period, order, &mut row);
    row
}

pub(crate) fn fourier_into<T: Scalar>(t: T, period: T, order: usize, out: &mut Vec<T>) {
    let base = T::TAU() * t / period;
    for k in 1..=order {
        let (s, c) = (base * T::of_usize(k)).sin_cos();
        out.push(c);
        out.push(s);
    }
}

/// Named set of dates with a day window around each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holiday {
    pub name: String,
    /// Start-of-day timestamps (UTC, ms).
    pub dates: Vec<i64>,
    /// Days before each date that are also affected (≤ 0).
    #[serde(default)]
    pub lower_window: i32,
    /// Days after each date that are also affected (≥ 0).
    #[serde(default)]
    pub upper_window: i32,
}

impl Holiday {
    pub fn new(name: impl Into<String>, dates: Vec<i64>) -> Self {
        Self { name: name.into(), dates, lower_window: 0, upper_window: 0 }
    }

    /// Whether `t_ms` falls on an affected day.
    pub fn is_active(&self, t_ms: i64) -> bool {
        self.dates.iter().any(|&d| {
            let lo = d + self.lower_window as i64 * MS_PER_DAY;
            let hi = d + (self.upper_window as i64 + 1) * MS_PER_DAY;
            lo <= t_ms && t_ms < hi
        })
    }
}
