use thiserror::Error;

use crate::netmodel::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network model: {0}")]
    InvalidModel(ValidationReport),

    #[error("invalid attack scenario: {0}")]
    InvalidScenario(ValidationReport),

    #[error("power flow did not converge after {iterations} iterations (max mismatch {max_mismatch:.3e} pu)")]
    Divergence { iterations: usize, max_mismatch: f64 },

    #[error("dynamic instability at t = {time:.3} s: generator {generator} speed deviation {d_omega:.4} pu")]
    Instability {
        time: f64,
        generator: usize,
        d_omega: f64,
        /// Trace recorded up to the last stable sample.
        partial: Option<Box<crate::dynamics::SimulationTrace>>,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("attack magnitude must be non-negative, got {0}")]
    NegativeMagnitude(f64),

    #[error("singular network matrix while {0}")]
    Singular(&'static str),

    #[error("least-squares fit needs at least 2 distinct points, got {0}")]
    Underdetermined(usize),

    #[error("{0}")]
    Config(String),
}
