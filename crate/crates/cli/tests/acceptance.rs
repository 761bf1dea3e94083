//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_DEVIATIONS` are reported as they are; the run only
//! fails on an unexpected FAIL.

#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use wattledger::billing::{compute_invoice, BillingEngine, Period, Tariff, DEFAULT_UTILITY_ACCOUNT};
use wattledger::forecast::solver::SmoothObjective;
use wattledger::forecast::{
    detect_outliers, fit, impute, resample, FitProblem, ImputeMethod, ModelConfig, OutlierMethod, Seasonality,
    TrendType, MS_PER_DAY,
};
use wattledger::ingest::ReadingStore;
use wattledger::ledger::{verify_blocks, Block, Chain, GenesisConfig, Hash32, Transaction};
use wattledger::metersim::{accumulate_energy, ApplianceProfile, DutyWindow, MeterSpec, Scenario};
use wattledger::series::Agg;
use wattledger::{EnergyAccumulator, TimeSeries};

const HOUR: i64 = 3_600_000;

/// Criteria expected to fail, with the reason.
const KNOWN_DEVIATIONS: &[(&str, &str)] = &[(
    "table1_pricing",
    "the published private total is Rs 6.99/kWh but its five heads add up to Rs 7.00; \
     with total = sum of head lines, 100 kWh private bills 70000 paise, not 69900",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(&str, Check); 9] = [
        ("energy_unit_check", energy_unit_check),
        ("table1_pricing", table1_pricing),
        ("immutability", immutability),
        ("hash_stability", hash_stability),
        ("forecast_recovery", forecast_recovery),
        ("logistic_gradient", logistic_gradient),
        ("pipeline_oracles", pipeline_oracles),
        ("end_to_end", end_to_end),
        ("determinism", determinism),
    ];
    let mut unexpected = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_DEVIATIONS.iter().find(|(n, _)| *n == name);
        println!("{} {name} ({secs:.3}s): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        match (o.pass, known) {
            (false, Some((_, why))) => println!("     known deviation: {why}"),
            (false, None) => unexpected += 1,
            (true, Some(_)) => println!("     listed as a known deviation but passed"),
            (true, None) => {}
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    }
}

fn energy_unit_check() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let partitions = 200;
    for p in 0..partitions {
        // Partition 0 is a single one-hour step; the rest use random cut points.
        let mut cuts: Vec<i64> = if p == 0 { vec![] } else { (0..rng.random_range(1..500)).map(|_| rng.random_range(1..HOUR)).collect() };
        cuts.push(0);
        cuts.push(HOUR);
        cuts.sort_unstable();
        cuts.dedup();
        let mut acc = EnergyAccumulator::new();
        for &t in &cuts {
            acc = accumulate_energy(acc, 1000.0, t).expect("valid sample");
        }
        worst = worst.max((acc.kwh - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-9 && secs < 1.0, format!("{partitions} partitions, max |kwh - 1| = {worst:.3e}, {secs:.3}s"))
}

fn table1_pricing() -> Outcome {
    let period = Period::new(0, 1).unwrap();
    let check = |tariff: Tariff, total: u64, lines: [u64; 5]| {
        let inv = compute_invoice(100.0, &tariff, "m", period).unwrap();
        let got: Vec<u64> = inv.lines.iter().map(|l| l.amount_paise).collect();
        let ok = inv.total_paise == total && got == lines;
        (ok, format!("{}: total {} (want {total}), lines {got:?}", tariff.name, inv.total_paise))
    };
    let (a, da) = check(Tariff::state(), 60_900, [47_000, 5_100, 4_100, 2_100, 2_600]);
    let (b, db) = check(Tariff::private(), 69_900, [51_700, 4_900, 5_700, 3_000, 4_700]);
    outcome(a && b, format!("{da}; {db}"))
}

fn fixture_chain() -> Chain {
    let genesis = GenesisConfig { timestamp_ms: 0, allocations: BTreeMap::from([("payer".into(), 1_000_000)]) };
    let mut chain = Chain::new(genesis);
    for i in 1..10i64 {
        let txs = vec![
            Transaction::new(format!("meter:m{i}"), "utility", 0, format!("invoice {i}").as_bytes(), i * 1000),
            Transaction::new("payer", "utility", 100 * i as u64, b"payment", i * 1000 + 1),
        ];
        chain.add_block(txs, i * 1000 + 2).unwrap();
    }
    chain
}

fn immutability() -> Outcome {
    let start = Instant::now();
    let chain = fixture_chain();
    let blocks = chain.blocks().to_vec();
    assert_eq!(blocks.len(), 10);
    if verify_blocks(&blocks).is_err() {
        return outcome(false, "fixture chain does not verify");
    }
    let records: Vec<Vec<u8>> = blocks.iter().map(Block::to_record_bytes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut detected, mut undecodable, mut wrong_index) = (0, 0, 0);
    let trials = 1000;
    for _ in 0..trials {
        let k = rng.random_range(0..records.len());
        let mut bytes = records[k].clone();
        let at = rng.random_range(0..bytes.len());
        bytes[at] ^= rng.random_range(1..=255u8);
        match Block::from_record_bytes(&bytes) {
            // The record for block k no longer parses, so block k is rejected.
            Err(_) => {
                undecodable += 1;
                detected += 1;
            }
            Ok(block) => {
                let mut tampered = blocks.clone();
                tampered[k] = block;
                match verify_blocks(&tampered) {
                    Ok(()) => {}
                    Err(t) => {
                        detected += 1;
                        if t.index != k as u64 {
                            wrong_index += 1;
                        }
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        detected == trials && wrong_index == 0 && secs < 5.0,
        format!("{detected}/{trials} detected ({undecodable} undecodable), {wrong_index} misattributed, {secs:.3}s"),
    )
}

fn hash_stability() -> Outcome {
    // Pinned from an independent SHA-256 (Python hashlib + struct) over the canonical layout.
    const GENESIS: &str = "57c22d97befa25f51b2ae74d05259b0b6af8d0185e0c238f5a0999355b425b16";
    const TX1: &str = "c81cfa3289c549b1e2ed7fa5e8e90cdf545c8eb1bb8809e7dac68d838b9d26ba";
    const TX2: &str = "f844de51235adfa50534393890c7e36e4496918280a819a2cd35d363e07dee08";
    const BLOCK: &str = "3c8a9a3e915c7cb51fdc99c0f95b40acb161b45b514443bb1c26dda36b96e0d2";
    let t1 = Transaction::new("meter:m1", "utility", 0, br#"{"invoice":"inv-0001"}"#, 1_700_000_000_000);
    let t2 = Transaction::new("alice", "utility", 60_900, b"pay inv-0001", 1_700_000_000_500);
    let block = Block::seal(1, 1_700_000_001_000, Hash32([0x11; 32]), vec![t1.clone(), t2.clone()]);
    let genesis = Block::genesis(0);
    let got = [genesis.hash.to_hex(), t1.tx_id.to_hex(), t2.tx_id.to_hex(), block.hash.to_hex()];
    let want = [GENESIS, TX1, TX2, BLOCK];
    let ok = got.iter().zip(want).all(|(g, w)| g == w) && block.gas_total == 42_544;
    outcome(ok, format!("block {} gas {}", block.hash, block.gas_total))
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn forecast_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let ts: Vec<i64> = (0..90 * 24).map(|h| h * HOUR).collect();
    let wave = |t: i64| 0.2 * (TAU * (t / HOUR % 24) as f64 / 24.0).sin();
    let y: Vec<f64> =
        ts.iter().map(|&t| 0.5 + 0.01 * (t / MS_PER_DAY) as f64 + wave(t) + noise.sample(&mut rng)).collect();
    let n_train = 83 * 24;
    let train = TimeSeries::from_dense(ts[..n_train].to_vec(), y[..n_train].to_vec()).unwrap();
    let config = ModelConfig {
        trend_type: TrendType::Linear,
        seasonalities: vec![Seasonality::new("daily", 1.0, 4)],
        ..ModelConfig::default()
    };
    let result = match fit(&config, &train, &BTreeMap::new()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let pred = result.model.predict(&ts[n_train..], &BTreeMap::new()).unwrap();
    let rmse = (pred.iter().zip(&y[n_train..]).map(|(p, y)| (p.yhat - y).powi(2)).sum::<f64>() / pred.len() as f64).sqrt();
    let seasonal: Vec<f64> = pred.iter().map(|p| p.seasonal).collect();
    let truth: Vec<f64> = ts[n_train..].iter().map(|&t| wave(t)).collect();
    let corr = pearson(&seasonal, &truth);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        rmse <= 0.10 && corr >= 0.95 && secs < 30.0,
        format!("holdout rmse {rmse:.4}, seasonal correlation {corr:.4}"),
    )
}

fn logistic_gradient() -> Outcome {
    let ts: Vec<i64> = (0..24 * 20).map(|h| h * HOUR).collect();
    let y: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let x = t as f64 / (20.0 * MS_PER_DAY as f64);
            8.0 / (1.0 + (-6.0 * (x - 0.4)).exp()) + 0.3 * (TAU * t as f64 / MS_PER_DAY as f64).sin()
        })
        .collect();
    let s = TimeSeries::from_dense(ts, y).unwrap();
    let config = ModelConfig {
        trend_type: TrendType::Logistic,
        capacity: Some(10.0),
        n_changepoints: 6,
        seasonalities: vec![Seasonality::new("daily", 1.0, 2)],
        ..ModelConfig::default()
    };
    let mut problem = FitProblem::new(&config, &s, &BTreeMap::new()).unwrap();
    problem.set_sigma2(0.01);
    let p = problem.n_params();
    let n_cp = problem.n_changepoints();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut theta: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..0.5)).collect();
        theta[0] = rng.random_range(1.0..8.0);
        theta[1] = rng.random_range(0.1..0.7);
        for d in &mut theta[2..2 + n_cp] {
            *d = rng.random_range(-0.1..0.1);
        }
        let (_, analytic) = problem.value_and_gradient(&theta);
        let fd: Vec<f64> = (0..p)
            .map(|i| {
                let h = 1e-6 * theta[i].abs().max(1.0);
                let (mut a, mut b) = (theta.clone(), theta.clone());
                a[i] += h;
                b[i] -= h;
                (problem.value(&a) - problem.value(&b)) / (2.0 * h)
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(a, f)| a - f).collect();
        worst = worst.max(norm(&diff) / norm(&analytic).max(norm(&fd)));
    }
    outcome(worst <= 1e-5, format!("20 points, max relative error {worst:.3e}"))
}

fn random_series(rng: &mut ChaCha8Rng) -> (Vec<i64>, Vec<Option<f64>>) {
    let n = rng.random_range(0..=32);
    let mut t = -50;
    let mut ts = Vec::with_capacity(n);
    let mut vs = Vec::with_capacity(n);
    for _ in 0..n {
        t += rng.random_range(1..40);
        ts.push(t);
        vs.push(rng.random_bool(0.75).then(|| rng.random_range(-6..7) as f64 * 0.5));
    }
    (ts, vs)
}

fn close(a: &[Option<f64>], b: &[Option<f64>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
            _ => x == y,
        })
}

fn pipeline_oracles() -> Outcome {
    let cases = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut mismatches = BTreeMap::from([("impute", 0), ("zscore", 0), ("iqr", 0), ("resample", 0)]);
    for _ in 0..cases {
        let (ts, vs) = random_series(&mut rng);
        let s = TimeSeries::new(ts.clone(), vs.clone()).unwrap();
        let defined = vs.iter().flatten().count();

        let impute_ok = if !vs.is_empty() && defined == 0 {
            impute(&s, ImputeMethod::ForwardFill).is_err()
        } else {
            close(impute(&s, ImputeMethod::ForwardFill).unwrap().values(), &oracles::forward_fill(&vs))
                && close(impute(&s, ImputeMethod::BackwardFill).unwrap().values(), &oracles::backward_fill(&vs))
                && close(impute(&s, ImputeMethod::LinearInterpolation).unwrap().values(), &oracles::linear(&ts, &vs))
        };
        *mismatches.get_mut("impute").unwrap() += usize::from(!impute_ok);

        let threshold = rng.random_range(0.5..3.5);
        let z_ok = match detect_outliers(&s, OutlierMethod::Zscore, threshold) {
            Err(_) => defined < 2,
            Ok(got) => {
                let (want, z) = oracles::zscore(&vs, threshold);
                defined >= 2 && (0..vs.len()).all(|i| (z[i] - threshold).abs() <= 1e-9 || got[i] == want[i])
            }
        };
        *mismatches.get_mut("zscore").unwrap() += usize::from(!z_ok);

        let multiplier = rng.random_range(0.5..3.0);
        let iqr_ok = match detect_outliers(&s, OutlierMethod::Iqr, multiplier) {
            Err(_) => defined < 4,
            Ok(got) => defined >= 4 && got == oracles::iqr(&vs, multiplier),
        };
        *mismatches.get_mut("iqr").unwrap() += usize::from(!iqr_ok);

        let step = rng.random_range(1..60);
        let (name, agg) = [("mean", Agg::Mean), ("sum", Agg::Sum), ("max", Agg::Max), ("last", Agg::Last)][rng.random_range(0..4)];
        let got = resample(&s, step, agg).unwrap();
        let (stamps, want) = oracles::resample(&ts, &vs, step, name);
        let rs_ok = got.timestamps() == &stamps[..] && close(got.values(), &want);
        *mismatches.get_mut("resample").unwrap() += usize::from(!rs_ok);
    }
    let total: usize = mismatches.values().sum();
    outcome(total == 0, format!("{cases} cases each, mismatches {mismatches:?}"))
}

fn end_to_end() -> Outcome {
    let day = MS_PER_DAY;
    let interval = 60_000;
    let meters = vec![
        MeterSpec { meter_id: "flat-a".into(), profile: ApplianceProfile::constant("fridge", 150.0), relay_on: true },
        MeterSpec {
            meter_id: "flat-b".into(),
            profile: ApplianceProfile {
                duty_schedule: vec![DutyWindow(600, 1080)],
                power_factor: 0.9,
                ..ApplianceProfile::constant("air-conditioner", 1500.0)
            },
            relay_on: true,
        },
        MeterSpec {
            meter_id: "flat-c".into(),
            profile: ApplianceProfile {
                duty_schedule: vec![DutyWindow(360, 420), DutyWindow(1140, 1260)],
                power_factor: 0.95,
                ..ApplianceProfile::constant("heater", 2000.0)
            },
            relay_on: true,
        },
    ];
    let scenario = Scenario {
        seed: 2024,
        interval_ms: interval,
        start_ms: 0,
        duration_ms: 30 * day + interval,
        meters,
        tariff: Some("state".into()),
        peak_threshold_va: None,
    };
    let store = ReadingStore::in_memory();
    let mut trace: BTreeMap<String, Vec<(i64, f64)>> = BTreeMap::new();
    scenario
        .run(|r| -> Result<(), wattledger::metersim::SimError> {
            trace.entry(r.meter_id.clone()).or_default().push((r.timestamp_ms, r.apparent_power));
            store.submit(r).expect("monotonic readings");
            Ok(())
        })
        .unwrap();

    let payers: BTreeMap<String, u64> = (0..3).map(|i| (format!("tenant-{i}"), 10_000_000)).collect();
    let mut chain = Chain::new(GenesisConfig { timestamp_ms: 0, allocations: payers });
    let mut engine = BillingEngine::new(DEFAULT_UTILITY_ACCOUNT);
    let period = Period::new(0, 30 * day).unwrap();
    let out = engine.run_billing_cycle(&store, &mut chain, period, &Tariff::state(), 30 * day).unwrap();
    let n_invoices = out.invoices.len();
    let block_ok = out.block.as_ref().is_some_and(|b| chain.block(b.index).is_some_and(|blk| blk.transactions.len() == 3))
        && chain.len() == 2;

    let mut worst: f64 = 0.0;
    for inv in &out.invoices {
        let pts = &trace[&inv.meter_id];
        let oracle_kwh: f64 = pts
            .windows(2)
            .filter(|w| w[0].0 >= period.start_ms && w[1].0 <= period.end_ms)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0) as f64 / 3.6e9)
            .sum();
        worst = worst.max((inv.kwh_billed - oracle_kwh).abs() / oracle_kwh);
    }
    for (i, inv) in out.invoices.iter().enumerate() {
        engine.pay_invoice(&mut chain, &inv.invoice_id, &format!("tenant-{i}"), 31 * day + i as i64).unwrap();
    }
    let verified = chain.verify().is_ok();
    outcome(
        n_invoices == 3 && block_ok && worst <= 1e-3 && verified,
        format!(
            "{n_invoices} invoices in block {:?}, max kWh deviation {:.2e}, verify after {} payments: {}",
            out.block.map(|b| b.index),
            worst,
            out.invoices.len(),
            if verified { "ok" } else { "failed" }
        ),
    )
}

fn watt(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_watt")).args(args).current_dir(dir).output().expect("watt runs")
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("scenario.json"),
        r#"{"seed": 77, "interval_ms": 60000, "start_ms": 0, "duration_ms": 172800000,
            "meters": [
              {"meter_id": "m1", "profile": {"name": "fridge", "rated_power": 150}},
              {"meter_id": "m2", "profile": {"name": "ac", "rated_power": 1500, "power_factor": 0.9, "duty_schedule": [[600, 1080]]}},
              {"meter_id": "m3", "profile": {"name": "pump", "rated_power": 750, "duty_schedule": [[0, 60]]}}
            ]}"#,
    )
    .unwrap();
    std::fs::write(dir.join("config.json"), r#"{"genesis": {"timestamp_ms": 0, "allocations": {"payer": 10000000}}}"#)
        .unwrap();

    let mut ndjson = Vec::new();
    let mut heads = Vec::new();
    for run in ["a", "b"] {
        let out = format!("{run}.ndjson");
        let sim = watt(&["simulate", "scenario.json", "--out", &out], dir);
        if !sim.status.success() {
            return outcome(false, format!("simulate failed: {}", String::from_utf8_lossy(&sim.stderr)));
        }
        ndjson.push(std::fs::read(dir.join(&out)).unwrap());

        let base = ["--config", "config.json", "--data-dir", run];
        let step = |extra: &[&str]| {
            let args: Vec<&str> = base.iter().chain(extra).copied().collect();
            watt(&args, dir)
        };
        let mut steps = vec![
            step(&["simulate", "scenario.json", "--to-store"]),
            step(&["bill", "--start", "0", "--end", "172800000", "--tariff", "private", "--at", "172800000"]),
        ];
        let listed = step(&["--format", "json", "export", "invoices"]);
        let invoices: serde_json::Value = serde_json::from_slice(&listed.stdout).unwrap_or_default();
        for (i, inv) in invoices.as_array().into_iter().flatten().enumerate() {
            let id = inv["invoice_id"].as_str().unwrap_or_default().to_string();
            let at = (200_000_000 + i).to_string();
            steps.push(step(&["pay", &id, "--payer", "payer", "--at", &at]));
        }
        if let Some(failed) = steps.iter().find(|o| !o.status.success()) {
            return outcome(false, format!("run {run}: {}", String::from_utf8_lossy(&failed.stderr)));
        }
        let shown = step(&["--format", "json", "ledger", "show"]);
        let blocks: serde_json::Value = serde_json::from_slice(&shown.stdout).unwrap_or_default();
        heads.push(blocks.as_array().and_then(|b| b.last()).map(|b| b["hash"].clone()));
    }
    let lines = ndjson[0].iter().filter(|&&b| b == b'\n').count();
    let same_bytes = ndjson[0] == ndjson[1] && lines == 3 * 2880;
    let same_head = heads[0].is_some() && heads[0] == heads[1];
    outcome(
        same_bytes && same_head,
        format!(
            "ndjson {} ({lines} lines), head hash {} ({})",
            if ndjson[0] == ndjson[1] { "identical" } else { "differs" },
            if same_head { "identical" } else { "differs" },
            heads[0].as_ref().and_then(|h| h.as_str()).unwrap_or("none")
        ),
    )
}
