//! Brute-force reference implementations of the pipeline operations.
//!
//! Each works per output element by scanning the whole input, with no shared
//! state between elements.

#![allow(dead_code)]

pub fn forward_fill(values: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..values.len()).map(|i| (0..=i).rev().find_map(|j| values[j])).collect()
}

pub fn backward_fill(values: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..values.len()).map(|i| (i..values.len()).find_map(|j| values[j])).collect()
}

pub fn linear(ts: &[i64], values: &[Option<f64>]) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|i| {
            if values[i].is_some() {
                return values[i];
            }
            let left = (0..i).rev().find(|&j| values[j].is_some())?;
            let right = (i + 1..values.len()).find(|&j| values[j].is_some())?;
            let (y0, y1) = (values[left]?, values[right]?);
            let w = (ts[i] - ts[left]) as f64 / (ts[right] - ts[left]) as f64;
            Some(y0 + (y1 - y0) * w)
        })
        .collect()
}

fn defined(values: &[Option<f64>]) -> Vec<f64> {
    values.iter().flatten().copied().collect()
}

/// Flags plus the per-element z scores (NaN where undefined) so callers can skip ties.
pub fn zscore(values: &[Option<f64>], threshold: f64) -> (Vec<bool>, Vec<f64>) {
    let xs = defined(values);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let z: Vec<f64> = values.iter().map(|v| v.map_or(f64::NAN, |x| (x - mean).abs() / std)).collect();
    let flags = values.iter().zip(&z).map(|(v, z)| v.is_some() && std > 0.0 && *z >= threshold).collect();
    (flags, z)
}

fn r7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn iqr(values: &[Option<f64>], multiplier: f64) -> Vec<bool> {
    let mut xs = defined(values);
    xs.sort_by(f64::total_cmp);
    let (q1, q3) = (r7(&xs, 0.25), r7(&xs, 0.75));
    let spread = q3 - q1;
    let median = r7(&xs, 0.5);
    values
        .iter()
        .map(|v| match v {
            None => false,
            Some(x) if spread == 0.0 => *x != median,
            Some(x) => *x < q1 - multiplier * spread || *x > q3 + multiplier * spread,
        })
        .collect()
}

pub fn resample(ts: &[i64], values: &[Option<f64>], step: i64, agg: &str) -> (Vec<i64>, Vec<Option<f64>>) {
    if ts.is_empty() {
        return (vec![], vec![]);
    }
    let floor = |t: i64| t.div_euclid(step) * step;
    let mut stamps = vec![];
    let mut b = floor(ts[0]);
    while b <= ts[ts.len() - 1] {
        stamps.push(b);
        b += step;
    }
    let out = stamps
        .iter()
        .map(|&b| {
            let members: Vec<f64> =
                ts.iter().zip(values).filter(|(t, v)| floor(**t) == b && v.is_some()).map(|(_, v)| v.unwrap()).collect();
            if members.is_empty() {
                return None;
            }
            Some(match agg {
                "mean" => members.iter().sum::<f64>() / members.len() as f64,
                "sum" => members.iter().sum::<f64>(),
                "max" => members.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                "last" => *members.last().unwrap(),
                _ => unreachable!(),
            })
        })
        .collect();
    (stamps, out)
}
