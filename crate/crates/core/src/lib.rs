//! Smart-meter simulation, telemetry storage, a hash-chained billing ledger and
//! consumption forecasting.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the service and CLI use.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod billing;
pub mod forecast;
pub mod ingest;
pub mod ledger;
pub mod metersim;
pub mod scalar;
pub mod series;

pub use scalar::Scalar;

pub type EnergyAccumulator = metersim::EnergyAccumulator<f64>;
pub type TimeSeries = series::TimeSeries<f64>;
pub type ForecastModel = forecast::ForecastModel<f64>;
pub type FitResult = forecast::FitResult<f64>;
pub type PredictionRow = forecast::PredictionRow<f64>;
pub type Decomposition = forecast::Decomposition<f64>;
pub type TrendParams = forecast::TrendParams<f64>;

pub use billing::{BillingEngine, BillingError, Invoice, Period, Tariff};
pub use forecast::{ForecastError, ModelConfig};
pub use ingest::{IngestError, ReadingStore};
pub use ledger::{Block, Chain, LedgerError, Transaction};
pub use metersim::{Fleet, MeterReading, Scenario, SimError};
