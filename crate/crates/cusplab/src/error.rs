//! Error taxonomy shared by the whole crate.
//!
//! Variants map onto the CLI exit codes: config 2, validation 3,
//! numeric 4, budget 5.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration input.
    #[error("config: {0}")]
    Config(String),

    /// Domain validation failed (ping-pong violated, parameter out of range).
    #[error("validation: {0}")]
    Validation(String),

    /// A numeric routine failed to converge or left its contract.
    #[error("numeric: {0}")]
    Numeric(String),

    /// A work budget (node cap, iteration cap) was exhausted; partial
    /// results may accompany the message.
    #[error("budget exhausted: {0}")]
    Budget(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Validation(_) => 3,
            Error::Numeric(_) => 4,
            Error::Budget(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
