use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use wattledger::billing::BillingError;
use wattledger::forecast::ForecastError;
use wattledger::ingest::IngestError;
use wattledger::ledger::LedgerError;
use wattledger::metersim::SimError;

/// Error body is always `{"error": "<message>"}`.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let status = match &e {
            IngestError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            IngestError::Ordering { .. } => StatusCode::CONFLICT,
            IngestError::NotFound(_) => StatusCode::NOT_FOUND,
            IngestError::Query(_) | IngestError::Series(_) => StatusCode::BAD_REQUEST,
            IngestError::Corrupt { .. } | IngestError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        let status = match &e {
            LedgerError::InsufficientBalance { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            LedgerError::NoSuchBlock(_) => StatusCode::NOT_FOUND,
            LedgerError::EmptyBlock | LedgerError::MalformedTransaction | LedgerError::InvalidHash(_) => {
                StatusCode::BAD_REQUEST
            }
            LedgerError::Overflow(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<BillingError> for ApiError {
    fn from(e: BillingError) -> Self {
        match e {
            BillingError::Ledger(e) => e.into(),
            BillingError::Ingest(e) => e.into(),
            e => {
                let status = match &e {
                    BillingError::Domain(_) | BillingError::InvalidPeriod { .. } | BillingError::UnknownTariff(_) => {
                        StatusCode::BAD_REQUEST
                    }
                    BillingError::PeriodNotClosed { .. } | BillingError::AlreadyPaid(_) => StatusCode::CONFLICT,
                    BillingError::UnknownInvoice(_) | BillingError::NoGoal(_) => StatusCode::NOT_FOUND,
                    _ => StatusCode::INTERNAL_SERVER_ERROR,
                };
                ApiError::new(status, e.to_string())
            }
        }
    }
}

impl From<ForecastError> for ApiError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::Ingest(e) => e.into(),
            ForecastError::Io(_) | ForecastError::Numerical(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
            }
            e => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        }
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        let status = match &e {
            SimError::UnknownMeter(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError::new(status, e.to_string())
    }
}
