//! Software twin of a two-node polarization-entanglement network: state
//! model, fiber channel, coincidence statistics, CHSH analysis, drift
//! compensation and the public analyzer station.

pub mod analyzer;
pub mod angle;
pub mod channel;
pub mod chsh;
pub mod compensation;
pub mod counting;
pub mod error;
pub mod polarization;
pub mod tomography;

pub use angle::AngleDeg;
pub use error::{Error, Result};
pub use polarization::{
    AnalyzerSetting, LocalUnitary, Port, TwoQubitState, WaveplateKind,
};
