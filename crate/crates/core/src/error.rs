use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} lies outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("non-finite moment pair ({0}, {1}); the fit is corrupted")]
    NonFinite(f64, f64),

    #[error("moments ({0}, {1}) are not admissible")]
    Inadmissible(f64, f64),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("singular normal equations: {0}")]
    Singular(String),

    #[error("deposited mass is zero")]
    ZeroMass,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("row {row}: {msg}")]
    MalformedRow { row: usize, msg: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checksum mismatch for {0}")]
    Checksum(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_range(what: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(Error::Domain { what, value, lo, hi })
    }
}
