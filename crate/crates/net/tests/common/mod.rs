#![allow(dead_code)]

use std::path::Path;

use pqn_net::link::{WireEvent, WireTap};
use pqn_net::{spawn_closet, spawn_gateway, spawn_source, Config, DaemonHandle, SourceOptions};
use tokio::sync::mpsc;

pub struct Network {
    pub cfg: Config,
    pub closet: DaemonHandle,
    pub source: DaemonHandle,
    pub gateway: DaemonHandle,
    pub wire: mpsc::UnboundedReceiver<WireEvent>,
}

/// Closet, source and gateway on ephemeral loopback ports, wired together.
pub async fn start(mut cfg: Config) -> Network {
    let closet = spawn_closet(&cfg).await.unwrap();
    cfg.nodes.closet_addr = closet.local_addr();
    let (tap, wire): (WireTap, _) = mpsc::unbounded_channel();
    let source = spawn_source(&cfg, SourceOptions { tap: Some(tap) }).await.unwrap();
    cfg.nodes.source_addr = source.local_addr();
    let gateway = spawn_gateway(&cfg).await.unwrap();
    cfg.kiosk.listen_addr = gateway.local_addr();
    Network { cfg, closet, source, gateway, wire }
}

/// Loopback configuration with a small precomputed sweep so gateway start
/// is cheap.
pub fn config(dir: &Path) -> Config {
    let mut cfg = Config::loopback(dir);
    let pts = pqn_core::chsh::sweep_angular_difference(
        &pqn_core::chsh::SweepConfig::default(),
        &pqn_core::chsh::linear_grid(-90.0, 90.0, 37),
    )
    .unwrap();
    let path = dir.join("sweep.csv");
    pqn_core::chsh::write_sweep_csv(std::fs::File::create(&path).unwrap(), &pts).unwrap();
    cfg.kiosk.sweep_csv = Some(path);
    cfg
}

pub fn drain(rx: &mut mpsc::UnboundedReceiver<WireEvent>) -> Vec<WireEvent> {
    let mut out = Vec::new();
    while let Ok(e) = rx.try_recv() {
        out.push(e);
    }
    out
}

/// Checks one session's accepted wire traffic against
/// (SET_ANGLE ANGLE_SET SET_ANGLE ANGLE_SET START_COUNT COUNT_REPORT){16},
/// allowing the two waveplate exchanges to interleave. Returns the request
/// ids in issue order.
pub fn check_choreography(events: &[WireEvent]) -> Result<Vec<u64>, String> {
    use pqn_net::protocol::ProtocolMessage as M;
    let session: Vec<&WireEvent> =
        events.iter().filter(|e| e.accepted && !matches!(e.message, M::Hello { .. })).collect();
    let names: String = session.iter().map(|e| format!("{} ", e.message.type_name())).collect();
    let pair = r"(SET_ANGLE ANGLE_SET SET_ANGLE ANGLE_SET |SET_ANGLE SET_ANGLE ANGLE_SET ANGLE_SET )";
    let re = regex::Regex::new(&format!(r"^({pair}START_COUNT COUNT_REPORT ){{16}}$")).unwrap();
    if !re.is_match(&names) {
        return Err(format!("wire sequence does not match: {names}"));
    }
    let mut issued = Vec::new();
    let mut answered = std::collections::HashSet::new();
    for e in &session {
        match &e.message {
            M::SetAngle { request_id, .. } | M::StartCount { request_id, .. } => issued.push(*request_id),
            m @ (M::AngleSet { .. } | M::CountReport { .. }) => {
                let id = m.response_id().unwrap();
                if !issued.contains(&id) {
                    return Err(format!("response to unknown request {id}"));
                }
                if !answered.insert(id) {
                    return Err(format!("request {id} answered twice"));
                }
            }
            _ => {}
        }
    }
    if answered.len() != issued.len() {
        return Err(format!("{} requests, {} answered", issued.len(), answered.len()));
    }
    Ok(issued)
}
