#[path = "support/oracles.rs"]
mod oracles;

use proptest::prelude::*;

use wattledger::forecast::{detect_outliers, impute, resample, ImputeMethod, OutlierMethod};
use wattledger::series::Agg;
use wattledger::TimeSeries;

/// Up to 32 points with strictly increasing stamps, small-integer values and gaps.
fn arb_series() -> impl Strategy<Value = (Vec<i64>, Vec<Option<f64>>)> {
    prop::collection::vec((1i64..40, prop::option::weighted(0.75, -6i32..7)), 0..=32).prop_map(|pts| {
        let mut t = -50;
        let mut ts = Vec::new();
        let mut vs = Vec::new();
        for (gap, v) in pts {
            t += gap;
            ts.push(t);
            vs.push(v.map(|x| x as f64 * 0.5));
        }
        (ts, vs)
    })
}

fn build(ts: &[i64], vs: &[Option<f64>]) -> TimeSeries {
    TimeSeries::new(ts.to_vec(), vs.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn impute_matches_oracle((ts, vs) in arb_series()) {
        let s = build(&ts, &vs);
        if !vs.is_empty() && vs.iter().all(Option::is_none) {
            prop_assert!(impute(&s, ImputeMethod::ForwardFill).is_err());
            return Ok(());
        }
        prop_assert_eq!(impute(&s, ImputeMethod::ForwardFill).unwrap().values().to_vec(), oracles::forward_fill(&vs));
        prop_assert_eq!(impute(&s, ImputeMethod::BackwardFill).unwrap().values().to_vec(), oracles::backward_fill(&vs));
        let got = impute(&s, ImputeMethod::LinearInterpolation).unwrap();
        let want = oracles::linear(&ts, &vs);
        for (g, w) in got.values().iter().zip(&want) {
            match (g, w) {
                (Some(g), Some(w)) => prop_assert!((g - w).abs() <= 1e-12, "{} vs {}", g, w),
                _ => prop_assert_eq!(g, w),
            }
        }
    }

    #[test]
    fn zscore_matches_oracle((ts, vs) in arb_series(), threshold in 0.5f64..3.5) {
        let s = build(&ts, &vs);
        let n = vs.iter().flatten().count();
        let got = detect_outliers(&s, OutlierMethod::Zscore, threshold);
        if n < 2 {
            prop_assert!(got.is_err());
            return Ok(());
        }
        let (want, z) = oracles::zscore(&vs, threshold);
        let got = got.unwrap();
        for i in 0..vs.len() {
            // Skip scores that sit on the threshold within rounding.
            if (z[i] - threshold).abs() > 1e-9 {
                prop_assert_eq!(got[i], want[i], "index {}", i);
            }
        }
    }

    #[test]
    fn iqr_matches_oracle((ts, vs) in arb_series(), multiplier in 0.5f64..3.0) {
        let s = build(&ts, &vs);
        let n = vs.iter().flatten().count();
        let got = detect_outliers(&s, OutlierMethod::Iqr, multiplier);
        if n < 4 {
            prop_assert!(got.is_err());
            return Ok(());
        }
        prop_assert_eq!(got.unwrap(), oracles::iqr(&vs, multiplier));
    }

    #[test]
    fn resample_matches_oracle((ts, vs) in arb_series(), step in 1i64..60, agg in 0usize..4) {
        let (name, agg) = [("mean", Agg::Mean), ("sum", Agg::Sum), ("max", Agg::Max), ("last", Agg::Last)][agg];
        let got = resample(&build(&ts, &vs), step, agg).unwrap();
        let (stamps, want) = oracles::resample(&ts, &vs, step, name);
        prop_assert_eq!(got.timestamps(), &stamps[..]);
        for (g, w) in got.values().iter().zip(&want) {
            match (g, w) {
                (Some(g), Some(w)) => prop_assert!((g - w).abs() <= 1e-12),
                _ => prop_assert_eq!(*g, *w),
            }
        }
    }
}

#[test]
fn spec_examples() {
    let s = TimeSeries::regular(0, 1, vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0), Some(100.0)]).unwrap();
    assert_eq!(detect_outliers(&s, OutlierMethod::Iqr, 1.5).unwrap(), vec![false, false, false, false, true]);
    let hourly = TimeSeries::regular(0, 3_600_000, (0..24).map(|h| Some(h as f64)).collect()).unwrap();
    let daily = resample(&hourly, 86_400_000, Agg::Mean).unwrap();
    assert_eq!(daily.values(), &[Some(11.5)]);
}
