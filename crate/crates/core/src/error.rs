use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid action bounds: min {min} must be finite and below max {max}")]
    InvalidBounds { min: f64, max: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("event metrics inconsistent with a trigger: peak deviation {0} K")]
    InconsistentMetrics(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("performance map has no initialized supports")]
    EmptyMap,

    #[error("event at t = {0} s is still open")]
    EventOpen(f64),

    #[error("plant diverged at t = {time:.1} s (T_T = {t_t:.3} K, T_Z = {t_z:.3} K)")]
    Divergence { time: f64, t_t: f64, t_z: f64 },

    #[error("no stable region: every grid cell diverged or failed to settle")]
    NoStableRegion,

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("malformed map table: {0}")]
    MapTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
