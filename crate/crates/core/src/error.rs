//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric or structural precondition on an input was violated.
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: &'static str, reason: String },

    /// The open-loop gain never crosses unity; margins are undefined.
    #[error("loop inactive: open-loop gain never crosses unity")]
    LoopInactive,

    /// |G| > 1 at the phase crossover; the closed loop is unstable.
    #[error("unstable closed loop: |G| = {gain_at_crossover:.3} at {frequency_hz:.1} Hz phase crossover")]
    UnstableLoop {
        frequency_hz: f64,
        gain_at_crossover: f64,
    },

    /// A trace cannot support the requested fit (constant, too short, non-positive).
    #[error("degenerate trace: {0}")]
    DegenerateTrace(String),

    /// Scenario file parsing or validation failure.
    #[error("scenario error: {0}")]
    Scenario(String),

    /// A non-finite sample was fed to a stateful filter; state is frozen.
    #[error("non-finite sample fed to filter")]
    NonFiniteSample,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure(cond: bool, field: &'static str, reason: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidInput {
            field,
            reason: reason.into(),
        })
    }
}
