use std::path::{Path, PathBuf};

use serde::Deserialize;
use wattledger::billing::{Tariff, TariffBook};
use wattledger::forecast::{ModelConfig, PipelineConfig, UsageForecast};
use wattledger::ledger::GenesisConfig;

use crate::Failure;

/// Contents of the `--config` JSON file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data_dir: Option<PathBuf>,
    pub port: Option<u16>,
    /// Used only when a data directory's chain is created.
    pub genesis: Option<GenesisConfig>,
    /// Added to (or overriding) the built-in `state` and `private` presets.
    pub tariffs: Vec<Tariff>,
    pub forecast: ForecastSettings,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSettings {
    pub history_step_ms: i64,
    pub history_ms: Option<i64>,
    pub model: ModelConfig,
    pub pipeline: PipelineConfig,
}

impl Default for ForecastSettings {
    fn default() -> Self {
        let d = UsageForecast::default();
        Self { history_step_ms: d.history_step_ms, history_ms: d.history_ms, model: d.model, pipeline: d.pipeline }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Config::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }

    pub fn tariff_book(&self) -> Result<TariffBook, Failure> {
        let text = serde_json::to_string(&self.tariffs).expect("tariffs serialize");
        TariffBook::default().with_json(&text).map_err(|e| Failure::usage(e.to_string()))
    }

    pub fn genesis(&self) -> GenesisConfig {
        self.genesis.clone().unwrap_or_default()
    }

    pub fn usage_forecast(&self) -> UsageForecast {
        let f = &self.forecast;
        UsageForecast {
            history_step_ms: f.history_step_ms,
            history_ms: f.history_ms,
            model: f.model.clone(),
            pipeline: f.pipeline.clone(),
            ..UsageForecast::default()
        }
    }
}
