use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown wavelength channel {0} nm")]
    UnknownWavelength(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("calibration required on channel {0}")]
    CalibrationRequired(&'static str),

    #[error("no stored sweep table available")]
    Unavailable,

    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
