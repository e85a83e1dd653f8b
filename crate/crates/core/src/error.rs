use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Fewer than 38 dimensions were requested for a moderately anisotropic family.
    #[error(
        "no moderately anisotropic Kasner family in dimension {dim}: there do not exist any \
         Kasner solutions with max|q_i| < 1/6 for D <= 36, and the construction requires D >= 38"
    )]
    NoModerateFamily { dim: usize },

    /// A configuration value is inconsistent or out of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// A slice violates a structural invariant (SPD metric, positive lapse, ...).
    #[error("invalid state: {0}")]
    InvalidState(String),

    /// The lapse operator lost definiteness: `t^-2 + Sc <= 0` somewhere.
    #[error("lapse operator is not definite: min(t^-2 + Sc) = {min_coefficient:e}")]
    LapseIndefinite { min_coefficient: f64 },

    /// The linear lapse solve did not reach the tolerance.
    #[error("lapse solver did not converge after {iterations} iterations (residual {final_residual:e})")]
    SolverDivergence { iterations: usize, final_residual: f64 },

    /// The lapse came out non-positive somewhere.
    #[error("lapse is non-positive: n_min = {n_min:e}")]
    InvalidLapse { n_min: f64 },

    /// A geodesic stopped being causal during integration.
    #[error("geodesic turned spacelike at affine parameter {affine}: g4(v, v) = {causal_norm:e}")]
    SpacelikeTurn { affine: f64, causal_norm: f64 },

    /// I/O problem with the path involved.
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
