//! Consumption forecasting: data preparation plus an additive trend/seasonality/holiday/regressor model.

pub mod decompose;
pub mod features;
pub mod io;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod solver;
pub mod trend;
pub mod usage;

pub use decompose::{decompose, Decomposition};
pub use features::{fourier_features, make_changepoints, Holiday, MS_PER_DAY};
pub use model::{
    fit, FitProblem, FitResult, ForecastModel, ModelConfig, PredictionRow, Scaling as ModelScaling, SeasonalCoeffs,
    Seasonality, SeasonalityMode, TrendType,
};
pub use pipeline::{
    detect_outliers, impute, prepare, resample, split_and_normalize, ImputeMethod, OutlierMethod, PipelineConfig,
    Scaling, Split,
};
pub use trend::{Growth, LogisticGradient, TrendParams};
pub use usage::{forecast_meter, project_goal, UsageForecast};

use crate::series::SeriesError;

#[derive(Debug, thiserror::Error)]
pub enum ForecastError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("series has no defined values")]
    AllMissing,
    #[error("series too short: need {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("series contains missing values")]
    MissingValues,
    #[error("training timestamps span zero time")]
    DegenerateTime,
    #[error("observation {value} exceeds logistic capacity {capacity}")]
    CapacityExceeded { value: f64, capacity: f64 },
    #[error("missing values for regressor {0:?}")]
    MissingRegressor(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
