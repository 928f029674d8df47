//! Error classes and their process exit codes.

use porc_core::downstream::DownstreamError;
use porc_core::harness::HarnessError;
use porc_core::metrics::MetricError;
use porc_core::report::ReportError;
use porc_core::slide::SlideError;
use porc_core::ssl::SslError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn data(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{context}: {e}"))
    }
}

impl From<SslError> for CliError {
    fn from(e: SslError) -> Self {
        match e {
            SslError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::NonFinite { .. }
            | HarnessError::Ssl(SslError::NonFiniteLoss { .. })
            | HarnessError::Metric(MetricError::NonFinite) => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::NonFinite => CliError::Numeric(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    DownstreamError,
    ReportError,
    SlideError,
    csv::Error,
    serde_json::Error,
    std::io::Error,
    image::ImageError
);
