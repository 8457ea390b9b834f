//! Implementation of the `contactpsi` command-line tool.

pub mod cli;
pub mod config;
pub mod http;
pub mod serve;

use serde::Serialize;
use thiserror::Error;

/// An operational failure, reported as JSON on stderr with exit code 1.
#[derive(Debug, Error)]
#[error("{code}: {message}")]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        CliError {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Inner<'a> {
            code: &'a str,
            message: &'a str,
        }
        #[derive(Serialize)]
        struct Wrapper<'a> {
            error: Inner<'a>,
        }
        serde_json::to_string(&Wrapper {
            error: Inner {
                code: &self.code,
                message: &self.message,
            },
        })
        .expect("serializable")
    }
}

impl From<contactpsi::client::ClientError> for CliError {
    fn from(e: contactpsi::client::ClientError) -> Self {
        match &e {
            contactpsi::client::ClientError::Server { code, message, .. } => CliError::new(code, message.clone()),
            other => CliError::new(other.code(), other.to_string()),
        }
    }
}

impl From<contactpsi::server::ServerError> for CliError {
    fn from(e: contactpsi::server::ServerError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

impl From<contactpsi::sim::SimError> for CliError {
    fn from(e: contactpsi::sim::SimError) -> Self {
        use contactpsi::sim::SimError;
        let code = match &e {
            SimError::TooLarge { .. } => "budget_exceeded",
            SimError::Client(c) => c.code(),
            SimError::Server(s) => s.code(),
            SimError::Grid(_) | SimError::Config(_) => "validation_error",
        };
        CliError::new(code, e.to_string())
    }
}

impl From<contactpsi::grid::GridError> for CliError {
    fn from(e: contactpsi::grid::GridError) -> Self {
        CliError::new("validation_error", e.to_string())
    }
}

impl From<contactpsi::redaction::RedactionError> for CliError {
    fn from(e: contactpsi::redaction::RedactionError) -> Self {
        CliError::new("validation_error", e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io_error", e.to_string())
    }
}
