//! HTTP+JSON API over the reading store, billing ledger and forecaster.
//!
//! State lives under one data directory:
//!
//! ```text
//! <data_dir>/readings/<meter_id>.ndjson
//! <data_dir>/chain/genesis.json
//! <data_dir>/chain/chain.ndjson
//! <data_dir>/billing.json
//! ```

mod error;
mod routes;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use tokio::net::TcpListener;
use wattledger::billing::{BillingEngine, TariffBook, DEFAULT_UTILITY_ACCOUNT};
use wattledger::ingest::ReadingStore;
use wattledger::ledger::{Chain, GenesisConfig};
use wattledger::metersim::{Fleet, Scenario};

pub use error::ApiError;
pub use routes::router;

pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64))
}

/// Chain and billing state change together, so they share one lock.
pub struct Books {
    pub chain: Chain,
    pub billing: BillingEngine,
}

pub struct AppState {
    pub store: ReadingStore,
    pub books: Mutex<Books>,
    pub tariffs: TariffBook,
    /// Live simulator whose relays the API can switch.
    pub fleet: Option<Mutex<Fleet>>,
    pub clock: Clock,
}

impl AppState {
    /// Everything in memory; nothing is persisted.
    pub fn in_memory(genesis: GenesisConfig) -> Self {
        AppState {
            store: ReadingStore::in_memory(),
            books: Mutex::new(Books { chain: Chain::new(genesis), billing: BillingEngine::new(DEFAULT_UTILITY_ACCOUNT) }),
            tariffs: TariffBook::default(),
            fleet: None,
            clock: system_clock(),
        }
    }

    /// Opens (or initialises) the stores under `data_dir`.
    pub fn open(data_dir: &Path, genesis: GenesisConfig) -> Result<Self, ApiError> {
        let layout = DataDir::new(data_dir);
        Ok(AppState {
            store: ReadingStore::open(layout.readings())?,
            books: Mutex::new(Books {
                chain: Chain::open(layout.chain(), genesis)?,
                billing: BillingEngine::open(layout.billing(), DEFAULT_UTILITY_ACCOUNT)?,
            }),
            tariffs: TariffBook::default(),
            fleet: None,
            clock: system_clock(),
        })
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_tariffs(mut self, tariffs: TariffBook) -> Self {
        self.tariffs = tariffs;
        self
    }

    pub fn with_fleet(mut self, fleet: Fleet) -> Self {
        self.fleet = Some(Mutex::new(fleet));
        self
    }

    pub fn now(&self) -> i64 {
        (self.clock)()
    }

    pub fn flush(&self) -> Result<(), ApiError> {
        self.store.flush()?;
        self.books.lock().chain.flush()?;
        Ok(())
    }
}

/// Paths inside a data directory.
#[derive(Debug, Clone)]
pub struct DataDir(PathBuf);

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DataDir(root.into())
    }

    pub fn readings(&self) -> PathBuf {
        self.0.join("readings")
    }

    pub fn chain(&self) -> PathBuf {
        self.0.join("chain")
    }

    pub fn billing(&self) -> PathBuf {
        self.0.join("billing.json")
    }
}

/// Steps the fleet in real time, storing every reading, until the scenario
/// duration has elapsed (or forever when it is zero).
pub async fn drive_fleet(state: Arc<AppState>, scenario: Scenario) {
    let interval = std::time::Duration::from_millis(scenario.interval_ms as u64);
    let mut ticker = tokio::time::interval(interval);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let mut steps = 0i64;
    loop {
        ticker.tick().await;
        if scenario.duration_ms > 0 && steps >= scenario.steps() {
            return;
        }
        let now = state.now();
        let readings = match &state.fleet {
            Some(fleet) => match fleet.lock().step(now) {
                Ok(r) => r,
                Err(_) => continue,
            },
            None => return,
        };
        for r in readings {
            // A reading can collide with one submitted externally at the same millisecond; skip it.
            let _ = state.store.submit(r);
        }
        steps += 1;
    }
}

/// Serves the API until `shutdown` resolves, then flushes all stores.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone());
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    state.flush().map_err(|e| std::io::Error::other(e.to_string()))
}
