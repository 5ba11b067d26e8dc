//! Control plane for the two-node entanglement network twin: framed TCP
//! protocol, the source-lab session executor, the closet waveplate node, the
//! kiosk gateway, the results log and configuration.

pub mod client;
pub mod config;
pub mod daemon;
pub mod error;
pub mod fallback;
pub mod gateway;
pub mod link;
pub mod log;
pub mod motion;
pub mod physics;
pub mod protocol;
pub mod session;
pub mod source;
pub mod station;

pub use config::Config;
pub use daemon::{spawn_closet, DaemonHandle};
pub use error::{NetError, NetResult};
pub use gateway::spawn_gateway;
pub use protocol::{decode_message, encode_message, ProtocolMessage};
pub use source::{spawn_source, SourceOptions};
