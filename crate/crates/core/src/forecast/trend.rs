//! Piecewise growth curves.
//!
//! The rate starts at `k` and changes by `deltas[j]` at `changepoints[j]`.
//! Offsets are adjusted at every changepoint so the curve stays continuous.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Growth<T> {
    Linear,
    /// Saturating growth towards `capacity`.
    Logistic { capacity: T },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct TrendParams<T> {
    pub growth: Growth<T>,
    pub k: T,
    pub m: T,
    /// Ascending changepoint times.
    pub changepoints: Vec<T>,
    pub deltas: Vec<T>,
}

impl<T: Scalar> TrendParams<T> {
    pub fn linear(k: T, m: T) -> Self {
        Self { growth: Growth::Linear, k, m, changepoints: Vec::new(), deltas: Vec::new() }
    }

    pub fn logistic(capacity: T, k: T, m: T) -> Self {
        Self { growth: Growth::Logistic { capacity }, k, m, changepoints: Vec::new(), deltas: Vec::new() }
    }

    pub fn with_changepoints(mut self, changepoints: Vec<T>, deltas: Vec<T>) -> Self {
        assert_eq!(changepoints.len(), deltas.len());
        self.changepoints = changepoints;
        self.deltas = deltas;
        self
    }

    /// Number of changepoints at or before `t`.
    fn segment(&self, t: T) -> usize {
        self.changepoints.partition_point(|&s| s <= t)
    }

    /// Trend value at `t`.
    pub fn eval(&self, t: T) -> T {
        let seg = self.segment(t);
        match self.growth {
            Growth::Linear => {
                let mut rate = self.k;
                let mut offset = self.m;
                for j in 0..seg {
                    rate = rate + self.deltas[j];
                    offset = offset - self.changepoints[j] * self.deltas[j];
                }
                rate * t + offset
            }
            Growth::Logistic { capacity } => {
                let (rate, offset) = self.logistic_segments().swap_remove(seg);
                capacity / (T::one() + (-(rate * (t - offset))).exp())
            }
        }
    }

    /// `(rate, offset)` of each logistic segment; segment `j` follows changepoint `j - 1`.
    pub fn logistic_segments(&self) -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(self.changepoints.len() + 1);
        let (mut rate, mut offset) = (self.k, self.m);
        out.push((rate, offset));
        for (&s, &d) in self.changepoints.iter().zip(&self.deltas) {
            let next = rate + d;
            // Continuity at s: rate·(s - offset) = next·(s - next_offset).
            offset = s - (s - offset) * rate / next;
            rate = next;
            out.push((rate, offset));
        }
        out
    }
}

/// Logistic trend with its gradient with respect to `(k, m, delta_1..delta_S)`.
///
/// The gradient of every segment's rate and offset is propagated forward
/// through the continuity recursion, so evaluation at many times shares one pass.
#[derive(Debug, Clone)]
pub struct LogisticGradient<T> {
    capacity: T,
    changepoints: Vec<T>,
    rates: Vec<T>,
    offsets: Vec<T>,
    d_rates: Vec<Vec<T>>,
    d_offsets: Vec<Vec<T>>,
}

impl<T: Scalar> LogisticGradient<T> {
    pub fn new(capacity: T, k: T, m: T, changepoints: &[T], deltas: &[T]) -> Self {
        let p = 2 + deltas.len();
        let mut rates = vec![k];
        let mut offsets = vec![m];
        let mut d_rate = vec![T::zero(); p];
        d_rate[0] = T::one();
        let mut d_offset = vec![T::zero(); p];
        d_offset[1] = T::one();
        let mut d_rates = vec![d_rate.clone()];
        let mut d_offsets = vec![d_offset.clone()];
        for (j, (&s, &d)) in changepoints.iter().zip(deltas).enumerate() {
            let (rate, offset) = (*rates.last().unwrap(), *offsets.last().unwrap());
            let next = rate + d;
            let mut d_next = d_rate.clone();
            d_next[2 + j] = d_next[2 + j] + T::one();
            let ratio = rate / next;
            let gap = s - offset;
            // offset' = s - gap·ratio;  d(ratio) = (d_rate·next - rate·d_next) / next²
            let next_offset = s - gap * ratio;
            let d_next_offset: Vec<T> = (0..p)
                .map(|i| {
                    let d_ratio = (d_rate[i] * next - rate * d_next[i]) / (next * next);
                    d_offset[i] * ratio - gap * d_ratio
                })
                .collect();
            rates.push(next);
            offsets.push(next_offset);
            d_rate = d_next;
            d_offset = d_next_offset;
            d_rates.push(d_rate.clone());
            d_offsets.push(d_offset.clone());
        }
        Self { capacity, changepoints: changepoints.to_vec(), rates, offsets, d_rates, d_offsets }
    }

    /// Trend value at `t`; adds `weight · ∂g/∂θ` into `grad`.
    pub fn eval_accumulate(&self, t: T, weight: T, grad: &mut [T]) -> T {
        let seg = self.changepoints.partition_point(|&s| s <= t);
        let (rate, offset) = (self.rates[seg], self.offsets[seg]);
        let z = rate * (t - offset);
        let sig = T::one() / (T::one() + (-z).exp());
        let g = self.capacity * sig;
        if weight != T::zero() {
            let scale = weight * self.capacity * sig * (T::one() - sig);
            for (i, slot) in grad.iter_mut().enumerate() {
                let dz = self.d_rates[seg][i] * (t - offset) - rate * self.d_offsets[seg][i];
                *slot = *slot + scale * dz;
            }
        }
        g
    }

    pub fn eval(&self, t: T) -> T {
        let seg = self.changepoints.partition_point(|&s| s <= t);
        let z = self.rates[seg] * (t - self.offsets[seg]);
        self.capacity / (T::one() + (-z).exp())
    }
}
