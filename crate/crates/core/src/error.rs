use thiserror::Error;

/// Errors shared across the estimation and optimization modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance matrix is not symmetric positive definite")]
    NonSpdCovariance,

    /// Rejection sampling against the truncation box made essentially no
    /// progress; the box is far too small for the Gaussian it truncates.
    #[error("degenerate truncation box: acceptance rate {rate:.3e} after {proposals} proposals")]
    DegenerateTruncation { rate: f64, proposals: u64 },

    /// The TE10 mode does not propagate in some waveguide section at this
    /// frequency, so the transfer-matrix cascade is not defined.
    #[error("TE10 mode is evanescent at {omega:.6e} rad/s (below cutoff)")]
    BelowCutoff { omega: f64 },

    #[error("negative section length: {name} = {value}")]
    NegativeSectionLength { name: &'static str, value: f64 },

    #[error("surrogate fit failed: {0}")]
    SurrogateFit(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
