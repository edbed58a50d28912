//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received an argument outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A state's coordinates are not a valid split of the total capital.
    #[error("invalid state ({s1},{s2},{s3}) for K={k}: coordinates must sum to K")]
    InvalidState { s1: u32, s2: u32, s3: u32, k: u32 },

    /// A strategy profile does not cover every interior state.
    #[error("profile does not cover interior state ({s1},{s2},{s3})")]
    IncompleteProfile { s1: u32, s2: u32, s3: u32 },

    /// An iterative solver hit its iteration cap before reaching tolerance.
    /// Carries the last iterate so callers can inspect how far it got.
    #[error("no convergence within {max_t} iterations (last sup-norm change {last_delta:.3e})")]
    NonConvergence {
        max_t: usize,
        last_delta: f64,
        last: Vec<f64>,
    },

    /// A linear system that must be solvable was not, or its residual was
    /// too large. Indicates an internal invariant violation for p in (0,1).
    #[error("linear solve failed: {0}")]
    SolverFailure(String),

    /// A simulated game exceeded the round cap, which signals a bug in the
    /// chain construction (absorption is almost surely finite).
    #[error("simulation exceeded the round cap of {cap} rounds in game {game}")]
    SimulationDivergence { cap: u64, game: u64 },

    /// Exhaustive enumeration refused to run because the profile count is
    /// too large for the default guard.
    #[error("refusing to enumerate {profiles} deterministic profiles at K={k}; use the unbounded variant to force")]
    EnumerationTooLarge { k: u32, profiles: u128 },

    /// A configuration document was malformed.
    #[error("bad config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
