//! Deterministic smart-meter fleet simulation.
//!
//! Each simulated meter models a mains voltage sensor, a clamp-on current
//! sensor limited to 100 A, and a relay in series with one appliance. Energy is
//! integrated from apparent power with the millisecond accumulator
//!
//! ```text
//! kwh += apparent_power_va * (now_ms - last_ms) / 3.6e9
//! ```
//!
//! where `3.6e9` folds together milliseconds per hour (3.6e6) and watts per
//! kilowatt (1e3).

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Nominal RMS mains voltage.
pub const NOMINAL_VOLTAGE: f64 = 230.0;
/// Upper measurement limit of the current sensor, in amperes.
pub const SENSOR_MAX_CURRENT: f64 = 100.0;
/// Converts VA·ms into kWh.
pub const VA_MS_PER_KWH: f64 = 3.6e9;
pub const DEFAULT_INTERVAL_MS: i64 = 1000;

const MINUTES_PER_DAY: u32 = 1440;
const MS_PER_MINUTE: i64 = 60_000;
const MS_PER_DAY: i64 = 86_400_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("clock regression: sample at {now_ms} ms precedes last sample at {last_ms} ms")]
    ClockRegression { last_ms: i64, now_ms: i64 },
    #[error("step time {now_ms} ms does not advance past previous step at {last_ms} ms")]
    StepNotAdvancing { last_ms: i64, now_ms: i64 },
    #[error("unknown meter `{0}`")]
    UnknownMeter(String),
    #[error("invalid profile for `{meter}`: {reason}")]
    InvalidProfile { meter: String, reason: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Apparent power in volt-amperes from RMS voltage and current.
pub fn apparent_power<T: Scalar>(v_rms: T, i_rms: T) -> Result<T, SimError> {
    for (name, x) in [("v_rms", v_rms), ("i_rms", i_rms)] {
        if !x.is_finite() || x < T::zero() {
            return Err(SimError::Domain(format!("{name} must be finite and >= 0, got {x}")));
        }
    }
    Ok(v_rms * i_rms)
}

/// Running kWh total plus the time of the previous sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyAccumulator<T> {
    pub kwh: T,
    pub last_millis: Option<i64>,
}

impl<T: Scalar> Default for EnergyAccumulator<T> {
    fn default() -> Self {
        Self { kwh: T::zero(), last_millis: None }
    }
}

impl<T: Scalar> EnergyAccumulator<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_state(kwh: T, last_millis: i64) -> Self {
        Self { kwh, last_millis: Some(last_millis) }
    }
}

/// Integrates `power_va` over the time elapsed since the previous sample.
///
/// The first sample only records its timestamp. A timestamp earlier than the
/// previous one is rejected and the accumulator is left as it was.
pub fn accumulate_energy<T: Scalar>(
    acc: EnergyAccumulator<T>,
    power_va: T,
    now_ms: i64,
) -> Result<EnergyAccumulator<T>, SimError> {
    if !power_va.is_finite() || power_va < T::zero() {
        return Err(SimError::Domain(format!("power must be finite and >= 0, got {power_va}")));
    }
    match acc.last_millis {
        None => Ok(EnergyAccumulator { kwh: acc.kwh, last_millis: Some(now_ms) }),
        Some(last_ms) if now_ms < last_ms => Err(SimError::ClockRegression { last_ms, now_ms }),
        Some(last_ms) => {
            let elapsed = T::of_i64(now_ms - last_ms);
            Ok(EnergyAccumulator {
                kwh: acc.kwh + power_va * elapsed / T::of(VA_MS_PER_KWH),
                last_millis: Some(now_ms),
            })
        }
    }
}

/// `[start, end)` window in minutes of the UTC day during which the appliance draws power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DutyWindow(pub u32, pub u32);

impl DutyWindow {
    pub fn contains(&self, minute: u32) -> bool {
        self.0 <= minute && minute < self.1
    }
}

fn default_power_factor() -> f64 {
    1.0
}
fn default_sigma_v() -> f64 {
    2.0
}
fn default_sigma_frac_i() -> f64 {
    0.02
}

/// Electrical behaviour of the appliance behind a meter.
///
/// An empty `duty_schedule` means the appliance is always on (subject to the relay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceProfile {
    pub name: String,
    /// Active power in watts at nominal operation.
    pub rated_power: f64,
    #[serde(default)]
    pub duty_schedule: Vec<DutyWindow>,
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    #[serde(default = "default_sigma_v")]
    pub noise_sigma_v: f64,
    #[serde(default = "default_sigma_frac_i")]
    pub noise_sigma_frac_i: f64,
}

impl ApplianceProfile {
    pub fn constant(name: impl Into<String>, rated_power: f64) -> Self {
        Self {
            name: name.into(),
            rated_power,
            duty_schedule: Vec::new(),
            power_factor: 1.0,
            noise_sigma_v: default_sigma_v(),
            noise_sigma_frac_i: default_sigma_frac_i(),
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_sigma_v = 0.0;
        self.noise_sigma_frac_i = 0.0;
        self
    }

    pub fn validate(&self, meter: &str) -> Result<(), SimError> {
        let bad = |reason: String| SimError::InvalidProfile { meter: meter.to_string(), reason };
        if !self.rated_power.is_finite() || self.rated_power < 0.0 {
            return Err(bad(format!("rated_power must be >= 0, got {}", self.rated_power)));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(bad(format!("power_factor must lie in (0, 1], got {}", self.power_factor)));
        }
        if !(self.noise_sigma_v >= 0.0 && self.noise_sigma_frac_i >= 0.0) {
            return Err(bad("noise sigmas must be >= 0".into()));
        }
        let mut windows = self.duty_schedule.clone();
        windows.sort_by_key(|w| w.0);
        for w in &windows {
            if w.0 >= w.1 || w.1 > MINUTES_PER_DAY {
                return Err(bad(format!("duty window [{}, {}) must satisfy start < end <= 1440", w.0, w.1)));
            }
        }
        for pair in windows.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(bad(format!(
                    "duty windows [{}, {}) and [{}, {}) overlap",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(())
    }

    pub fn is_scheduled_on(&self, timestamp_ms: i64) -> bool {
        if self.duty_schedule.is_empty() {
            return true;
        }
        let minute = (timestamp_ms.rem_euclid(MS_PER_DAY) / MS_PER_MINUTE) as u32;
        self.duty_schedule.iter().any(|w| w.contains(minute))
    }
}

/// One timestamped sample. Field order is the NDJSON wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterReading {
    pub meter_id: String,
    pub timestamp_ms: i64,
    pub v_rms: f64,
    pub i_rms: f64,
    pub apparent_power: f64,
    pub kwh_total: f64,
}

#[derive(Debug, Clone)]
pub struct MeterState {
    pub meter_id: String,
    pub profile: ApplianceProfile,
    pub relay_on: bool,
    pub accumulator: EnergyAccumulator<f64>,
    rng: ChaCha8Rng,
}

impl MeterState {
    fn sample(&mut self, now_ms: i64) -> Result<MeterReading, SimError> {
        // Both draws happen every step so relay toggles never shift the noise stream.
        let zv: f64 = StandardNormal.sample(&mut self.rng);
        let zi: f64 = StandardNormal.sample(&mut self.rng);
        let v_rms = (NOMINAL_VOLTAGE + zv * self.profile.noise_sigma_v).max(0.0);
        let drawing = self.relay_on && self.profile.is_scheduled_on(now_ms) && v_rms > 0.0;
        let i_rms = if drawing {
            let nominal = self.profile.rated_power / self.profile.power_factor / v_rms;
            (nominal * (1.0 + zi * self.profile.noise_sigma_frac_i)).clamp(0.0, SENSOR_MAX_CURRENT)
        } else {
            0.0
        };
        let power = apparent_power(v_rms, i_rms)?;
        self.accumulator = accumulate_energy(self.accumulator, power, now_ms)?;
        Ok(MeterReading {
            meter_id: self.meter_id.clone(),
            timestamp_ms: now_ms,
            v_rms,
            i_rms,
            apparent_power: power,
            kwh_total: self.accumulator.kwh,
        })
    }
}

/// A set of meters advanced in lockstep.
#[derive(Debug, Clone)]
pub struct Fleet {
    meters: Vec<MeterState>,
    by_id: HashMap<String, usize>,
    last_step_ms: Option<i64>,
}

impl Fleet {
    /// Builds a fleet whose meter `i` draws from stream `i` of a ChaCha8 generator seeded with `seed`.
    pub fn new(seed: u64, meters: &[MeterSpec]) -> Result<Self, SimError> {
        let mut states = Vec::with_capacity(meters.len());
        let mut by_id = HashMap::new();
        for (i, spec) in meters.iter().enumerate() {
            spec.profile.validate(&spec.meter_id)?;
            if by_id.insert(spec.meter_id.clone(), i).is_some() {
                return Err(SimError::InvalidScenario(format!("duplicate meter_id `{}`", spec.meter_id)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            states.push(MeterState {
                meter_id: spec.meter_id.clone(),
                profile: spec.profile.clone(),
                relay_on: spec.relay_on,
                accumulator: EnergyAccumulator::new(),
                rng,
            });
        }
        Ok(Self { meters: states, by_id, last_step_ms: None })
    }

    pub fn meters(&self) -> &[MeterState] {
        &self.meters
    }

    pub fn meter(&self, meter_id: &str) -> Option<&MeterState> {
        self.by_id.get(meter_id).map(|&i| &self.meters[i])
    }

    pub fn meter_ids(&self) -> impl Iterator<Item = &str> {
        self.meters.iter().map(|m| m.meter_id.as_str())
    }

    /// Samples every meter at `now_ms`, which must be later than the previous step.
    pub fn step(&mut self, now_ms: i64) -> Result<Vec<MeterReading>, SimError> {
        if let Some(last_ms) = self.last_step_ms {
            if now_ms <= last_ms {
                return Err(SimError::StepNotAdvancing { last_ms, now_ms });
            }
        }
        let readings = self.meters.iter_mut().map(|m| m.sample(now_ms)).collect::<Result<Vec<_>, _>>()?;
        self.last_step_ms = Some(now_ms);
        Ok(readings)
    }

    /// Sets the relay of one meter. Idempotent; returns the new state.
    pub fn set_relay(&mut self, meter_id: &str, on: bool) -> Result<bool, SimError> {
        let &i = self.by_id.get(meter_id).ok_or_else(|| SimError::UnknownMeter(meter_id.to_string()))?;
        self.meters[i].relay_on = on;
        Ok(on)
    }
}

fn default_relay_on() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterSpec {
    pub meter_id: String,
    pub profile: ApplianceProfile,
    #[serde(default = "default_relay_on")]
    pub relay_on: bool,
}

fn default_interval() -> i64 {
    DEFAULT_INTERVAL_MS
}

/// Scenario file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_interval")]
    pub interval_ms: i64,
    /// Timestamp of the first sample.
    #[serde(default)]
    pub start_ms: i64,
    /// Simulated span; the run emits `duration_ms / interval_ms` samples per meter.
    pub duration_ms: i64,
    pub meters: Vec<MeterSpec>,
    /// Tariff preset name used by billing (`state` or `private`).
    #[serde(default)]
    pub tariff: Option<String>,
    #[serde(default)]
    pub peak_threshold_va: Option<f64>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.interval_ms <= 0 {
            return Err(SimError::InvalidScenario(format!("interval_ms must be > 0, got {}", self.interval_ms)));
        }
        if self.duration_ms < 0 {
            return Err(SimError::InvalidScenario(format!("duration_ms must be >= 0, got {}", self.duration_ms)));
        }
        if let Some(t) = self.peak_threshold_va {
            if !(t > 0.0) {
                return Err(SimError::InvalidScenario("peak_threshold_va must be > 0".into()));
            }
        }
        if let Some(name) = &self.tariff {
            if name != "state" && name != "private" {
                return Err(SimError::InvalidScenario(format!("unknown tariff preset `{name}`")));
            }
        }
        for m in &self.meters {
            m.profile.validate(&m.meter_id)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> i64 {
        self.duration_ms / self.interval_ms
    }

    pub fn fleet(&self) -> Result<Fleet, SimError> {
        Fleet::new(self.seed, &self.meters)
    }

    /// Runs the whole scenario, handing readings to `sink` in time order, meters in file order.
    pub fn run<E, F>(&self, mut sink: F) -> Result<(), E>
    where
        E: From<SimError>,
        F: FnMut(MeterReading) -> Result<(), E>,
    {
        let mut fleet = self.fleet()?;
        for k in 0..self.steps() {
            for reading in fleet.step(self.start_ms + k * self.interval_ms)? {
                sink(reading)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fleet_of(profile: ApplianceProfile) -> Fleet {
        Fleet::new(7, &[MeterSpec { meter_id: "m1".into(), profile, relay_on: true }]).unwrap()
    }

    #[test]
    fn apparent_power_examples() {
        assert_eq!(apparent_power(230.0, 5.0).unwrap(), 1150.0);
        assert_eq!(apparent_power(0.0, 7.3).unwrap(), 0.0);
        assert_relative_eq!(apparent_power(229.3, 0.436).unwrap(), 99.9748, max_relative = 1e-12);
        assert!(apparent_power(-1.0, 1.0).is_err());
        assert!(apparent_power(f64::NAN, 1.0).is_err());
        assert!(apparent_power(230.0f32, f32::INFINITY).is_err());
    }

    #[test]
    fn accumulate_examples() {
        let acc = EnergyAccumulator::with_state(0.0, 0);
        assert_eq!(accumulate_energy(acc, 1000.0, 3_600_000).unwrap().kwh, 1.0);

        let acc = EnergyAccumulator::with_state(5.2, 42);
        assert_eq!(accumulate_energy(acc, 999.0, 42).unwrap().kwh, 5.2);

        let acc = EnergyAccumulator::with_state(0.0, 0);
        assert_relative_eq!(accumulate_energy(acc, 100.05, 60_000).unwrap().kwh, 0.0016675, max_relative = 1e-12);
    }

    #[test]
    fn first_sample_only_sets_clock() {
        let acc = accumulate_energy(EnergyAccumulator::<f64>::new(), 5000.0, 1234).unwrap();
        assert_eq!(acc, EnergyAccumulator::with_state(0.0, 1234));
    }

    #[test]
    fn clock_regression_rejected() {
        let acc = EnergyAccumulator::with_state(1.5, 10_000);
        let err = accumulate_energy(acc, 100.0, 9_999).unwrap_err();
        assert_eq!(err, SimError::ClockRegression { last_ms: 10_000, now_ms: 9_999 });
        assert_eq!(acc.kwh, 1.5);
    }

    #[test]
    fn relay_off_zeroes_current() {
        let mut fleet = fleet_of(ApplianceProfile::constant("bulb", 60.0));
        fleet.step(0).unwrap();
        let before = fleet.step(1000).unwrap()[0].kwh_total;
        fleet.set_relay("m1", false).unwrap();
        let r = fleet.step(2000).unwrap().remove(0);
        assert_eq!(r.i_rms, 0.0);
        assert_eq!(r.apparent_power, 0.0);
        assert_eq!(r.kwh_total, before);
    }

    #[test]
    fn demand_above_sensor_range_is_clamped() {
        let mut fleet = fleet_of(ApplianceProfile::constant("furnace", 30_000.0).noiseless());
        let r = fleet.step(0).unwrap().remove(0);
        assert_eq!(r.v_rms, 230.0);
        assert_eq!(r.i_rms, 100.0);
        assert_eq!(r.apparent_power, 23_000.0);
    }

    #[test]
    fn set_relay_idempotent_and_unknown() {
        let mut fleet = fleet_of(ApplianceProfile::constant("bulb", 60.0));
        assert_eq!(fleet.set_relay("m1", false), Ok(false));
        assert_eq!(fleet.set_relay("m1", false), Ok(false));
        assert!(!fleet.meter("m1").unwrap().relay_on);
        assert_eq!(fleet.set_relay("nope", true), Err(SimError::UnknownMeter("nope".into())));
    }

    #[test]
    fn relay_back_on_resumes_rated_draw() {
        // Replay oracle: an untouched fleet with the same seed shares the noise
        // stream, so the resumed sample equals the untouched one.
        let profile = ApplianceProfile::constant("heater", 2000.0);
        let mut toggled = fleet_of(profile.clone());
        let mut reference = fleet_of(profile);
        for t in 0..3 {
            toggled.step(t * 1000).unwrap();
            reference.step(t * 1000).unwrap();
        }
        toggled.set_relay("m1", false).unwrap();
        assert_eq!(toggled.step(3000).unwrap()[0].i_rms, 0.0);
        reference.step(3000).unwrap();
        toggled.set_relay("m1", true).unwrap();
        let resumed = toggled.step(4000).unwrap().remove(0);
        let expected = reference.step(4000).unwrap().remove(0);
        assert_eq!(resumed.i_rms, expected.i_rms);
        assert_eq!(resumed.v_rms, expected.v_rms);
        assert!((resumed.i_rms * resumed.v_rms - 2000.0).abs() < 2000.0 * 0.1);
    }

    #[test]
    fn duty_schedule_gates_current() {
        let mut profile = ApplianceProfile::constant("lamp", 100.0).noiseless();
        profile.duty_schedule = vec![DutyWindow(60, 120)];
        let mut fleet = fleet_of(profile);
        assert_eq!(fleet.step(59 * 60_000).unwrap()[0].i_rms, 0.0);
        assert!(fleet.step(60 * 60_000).unwrap()[0].i_rms > 0.0);
        assert_eq!(fleet.step(120 * 60_000).unwrap()[0].i_rms, 0.0);
        // next day, same window
        assert!(fleet.step(MS_PER_DAY + 61 * 60_000).unwrap()[0].i_rms > 0.0);
    }

    #[test]
    fn step_must_advance() {
        let mut fleet = fleet_of(ApplianceProfile::constant("bulb", 60.0));
        fleet.step(1000).unwrap();
        assert!(matches!(fleet.step(1000), Err(SimError::StepNotAdvancing { .. })));
    }

    #[test]
    fn profile_validation() {
        let mut p = ApplianceProfile::constant("x", 10.0);
        p.power_factor = 0.0;
        assert!(p.validate("m").is_err());
        let mut p = ApplianceProfile::constant("x", -1.0);
        assert!(p.validate("m").is_err());
        p.rated_power = 1.0;
        p.duty_schedule = vec![DutyWindow(0, 100), DutyWindow(50, 200)];
        assert!(p.validate("m").is_err());
        p.duty_schedule = vec![DutyWindow(300, 200)];
        assert!(p.validate("m").is_err());
        p.duty_schedule = vec![DutyWindow(1000, 1440), DutyWindow(0, 1000)];
        assert!(p.validate("m").is_ok());
    }

    #[test]
    fn scenario_rejects_unknown_keys() {
        let bad = r#"{"seed":1,"duration_ms":10,"meters":[],"colour":"red"}"#;
        assert!(matches!(Scenario::from_json(bad), Err(SimError::InvalidScenario(_))));
        let ok = r#"{"seed":1,"duration_ms":10000,"meters":[{"meter_id":"a","profile":{"name":"bulb","rated_power":60}}]}"#;
        let s = Scenario::from_json(ok).unwrap();
        assert_eq!(s.interval_ms, 1000);
        assert_eq!(s.steps(), 10);
    }

    #[test]
    fn f32_accumulator() {
        let acc = EnergyAccumulator::<f32>::with_state(0.0, 0);
        assert_eq!(accumulate_energy(acc, 1000.0f32, 3_600_000).unwrap().kwh, 1.0f32);
    }
}
