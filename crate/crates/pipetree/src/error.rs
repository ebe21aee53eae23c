//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong when building trees, solving flows or
/// running the optimizers.
///
/// Validation problems (bad dimensions, out-of-range parameters) are kept
/// separate from [`Error::NumericalDegeneracy`], which flags conditions the
/// theory excludes (a failed Cholesky factorization, an inconsistent inlet
/// pressure reconstruction) and which callers may want to treat as "the
/// computation itself broke" rather than "the input was wrong".
#[derive(Debug, Error)]
pub enum Error {
    #[error("level count must be at least 1, got {0}")]
    InvalidLevels(usize),

    #[error("level count {levels} exceeds the dense-assembly cap of {cap}")]
    LevelsExceedCap { levels: usize, cap: usize },

    #[error("branch position {position} is outside 1..={max} at level {level}")]
    InvalidPosition {
        level: usize,
        position: usize,
        max: usize,
    },

    #[error("subpath length {requested} is outside 0..={len}")]
    SubpathOutOfRange { requested: usize, len: usize },

    #[error("{what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what}[{index}] = {value} must be strictly positive")]
    NonPositiveEntry {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("degenerate branch ({level},{position}): xi = {value:e} lies below the floor {floor:e}")]
    DegenerateBranch {
        level: usize,
        position: usize,
        value: f64,
        floor: f64,
    },

    #[error("{name} = {value} must be strictly positive and finite")]
    NonPositiveParameter { name: &'static str, value: f64 },

    #[error("volume cap lambda = {0} must be strictly greater than 1")]
    InvalidLambda(f64),

    #[error("epsilon = {epsilon:e} is outside the feasible range ({min:e}, {max:e})")]
    EpsilonOutOfRange { epsilon: f64, min: f64, max: f64 },

    #[error("all branch flows are zero; no positive optimal geometry exists")]
    AllZeroFlows,

    #[error("invalid optimizer config: {name} = {value} ({constraint})")]
    InvalidConfig {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
