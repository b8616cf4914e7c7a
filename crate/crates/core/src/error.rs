use thiserror::Error;

/// Errors shared across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("enumeration budget exceeded: {required:.3e} paths requested, budget {budget}")]
    BudgetExceeded { required: f64, budget: u64 },

    #[error(
        "bridge acceptance too low: {accepted} accepted in {tries} proposals (rate {rate:.3e})"
    )]
    AcceptanceTooLow {
        tries: u64,
        accepted: u64,
        rate: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("evaluation mode {mode} is not available for law {law}")]
    IncompatibleMode { law: String, mode: String },

    #[error("quadrature did not converge: relative error {achieved:.3e} after {points} points")]
    QuadratureNoConvergence { achieved: f64, points: u64 },

    #[error(
        "floating-point precision loss: bounded relative error {bound:.3e} exceeds {tolerance:.3e}"
    )]
    PrecisionLoss { bound: f64, tolerance: f64 },

    #[error("effective sample size collapsed: {ess:.1} of {samples} samples")]
    EssCollapse { ess: f64, samples: u64 },

    #[error("zero-length path has no local times")]
    EmptyPath,

    #[error("path length {path} does not match charge count {charges}")]
    LengthMismatch { path: usize, charges: usize },

    #[error("law `{0}` has no density")]
    NoDensity(String),

    #[error("Green function diverges for d = {0} (walk is recurrent)")]
    RecurrentDimension(u32),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    /// Exit-code class used by front ends: 2 for validation, 3 for
    /// budget/statistical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::IncompatibleMode { .. }
            | Error::EmptyPath
            | Error::LengthMismatch { .. }
            | Error::NoDensity(_)
            | Error::RecurrentDimension(_) => 2,
            Error::BudgetExceeded { .. }
            | Error::AcceptanceTooLow { .. }
            | Error::QuadratureNoConvergence { .. }
            | Error::PrecisionLoss { .. }
            | Error::EssCollapse { .. } => 3,
        }
    }
}
