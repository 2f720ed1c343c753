//! Shared error type for the simulator library.

use thiserror::Error;

/// Unified error type for all library operations.
#[derive(Debug, Error)]
pub enum SimError {
    /// An argument violates an operation's contract.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A server graph violates its structural requirements
    /// (disconnected, self-loop, duplicate edge, too few nodes).
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    /// Simulation state is inconsistent with the requested operation.
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// A configuration file or a cross-field constraint is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// The learning rate violates an admissibility condition of the
    /// convergence bound; carries the violated condition and its value.
    #[error("inadmissible learning rate: {condition} = {value} violates the stability requirement")]
    InadmissibleLearningRate { condition: String, value: f64 },

    /// An iterative numerical routine failed to converge or produced
    /// non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
