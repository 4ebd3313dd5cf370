use thiserror::Error;

/// Errors raised by the model, envelope, terrain and planning layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("altitude {0} m outside the atmosphere model range [0, 11000] m")]
    AltitudeOutOfRange(f64),
    #[error("angle of attack {alpha_deg:.4} deg outside the aerodynamic model range [{min_deg}, {max_deg}] deg")]
    AlphaOutOfRange {
        alpha_deg: f64,
        min_deg: f64,
        max_deg: f64,
    },
    #[error("pitch attitude at the +/-90 deg kinematic singularity")]
    PitchSingularity,
    #[error("degenerate attitude: rate-of-climb constraint has no solution for theta")]
    DegenerateAttitude,
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("envelope file schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
