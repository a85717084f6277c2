//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NvError {
    /// The axial field puts the electron transition inside the GSLAC
    /// exclusion zone where the perturbative coupling formula diverges.
    #[error(
        "axial field too close to the GSLAC: |d_gs - gamma_e * b_z| = {detuning_hz:.3e} Hz \
         is below the {limit_hz:.3e} Hz exclusion limit (b_z = {b_z_t} T)"
    )]
    GslacProximity {
        detuning_hz: f64,
        limit_hz: f64,
        b_z_t: f64,
    },

    /// The requested decoupling frequency cannot be reached with the given
    /// pi-pulse length: the pulse spacing would be negative.
    #[error(
        "negative pulse spacing: t_pi = {t_pi_s:.3e} s exceeds the half period \
         1/(2 f) = {half_period_s:.3e} s of the target frequency"
    )]
    NegativeTau { t_pi_s: f64, half_period_s: f64 },

    /// Eigenstate labelling by overlap with the bare basis failed; the
    /// requested level is too strongly mixed to be assigned.
    #[error("degenerate level assignment: best bare-state overlap {overlap:.4} < {threshold}")]
    Degeneracy { overlap: f64, threshold: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter {name}: {reason} (value {value})")]
    InvalidParam {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    /// No gate plan satisfies the requested tolerance within the search
    /// constraints.
    #[error("no feasible gate plan: {0}")]
    Infeasible(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("fit failure: {reason} (residual rms {residual_rms:.3e})")]
    FitFailure { reason: String, residual_rms: f64 },

    #[error("signal normalization undefined: s0 + s1 = {sum} must be positive")]
    NormalizationDomain { sum: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NvError>;
