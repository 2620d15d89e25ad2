use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("near-defective system: eigenvector condition number {condition:.3e} exceeds {limit:.1e}")]
    NearDefective { condition: f64, limit: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity exceeded: requested {requested}, maximum {maximum} ({what})")]
    Capacity {
        what: &'static str,
        requested: usize,
        maximum: usize,
    },

    #[error("energy conservation violated: sum(p) - sum(k) = {mismatch:.3e} (tolerance {tolerance:.1e})")]
    OffShell { mismatch: f64, tolerance: f64 },

    #[error("intermediate state {state} has real energy {energy:.6e} but is not the vacuum; its delta part has no pairing structure")]
    UnsupportedRealEnergy { state: usize, energy: f64 },

    #[error("reflection contamination: boundary weight {weight:.3e} at t = {time:.3}")]
    ReflectionContamination { weight: f64, time: f64 },

    #[error("memory budget exceeded: basis size {basis} > {budget}")]
    MemoryBudget { basis: usize, budget: usize },

    #[error("missing connected piece of size {0}")]
    MissingPiece(usize),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}
