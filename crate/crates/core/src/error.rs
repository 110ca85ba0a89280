use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its physical or mathematical domain.
    #[error("domain error in `{field}`: {reason}")]
    Domain { field: &'static str, reason: String },

    #[error("thermal detector model undefined for eta = 1; use the additive-noise path")]
    ThermalModelUndefined,

    #[error("covariance matrix is not physical: {0}")]
    InvalidState(String),

    #[error("numerical domain error: {0}")]
    NumericalDomain(String),

    #[error("literal conditional-entropy formula unphysical here (C^2 - 4D = {discriminant:e})")]
    LiteralUnphysical { discriminant: f64 },

    #[error("adaptive quadrature did not converge for coefficient index {index}")]
    Quadrature { index: i64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("modulation depth {depth:.4} of the carrier offset violates the linear regime (limit {limit})")]
    Linearization { depth: f64, limit: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("need at least {needed} records, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("channel opaque: regression slope {slope:e} indistinguishable from zero")]
    ChannelOpaque { slope: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors that come from numerics or physicality rather than
    /// from user configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ThermalModelUndefined
                | Error::InvalidState(_)
                | Error::NumericalDomain(_)
                | Error::LiteralUnphysical { .. }
                | Error::Quadrature { .. }
                | Error::Linearization { .. }
                | Error::Calibration(_)
                | Error::Estimation(_)
                | Error::ChannelOpaque { .. }
        )
    }
}
