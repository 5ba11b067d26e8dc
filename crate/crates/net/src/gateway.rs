//! Kiosk gateway daemon: serves kiosk clients, streams FRAME samples,
//! relays CALIBRATE to the station, and forwards RUN_CHSH to the source lab.
//! When the source lab cannot be reached the stored sweep is replayed and the
//! replayed result is logged with `live == false`.

use std::net::SocketAddr;
use std::time::Duration;

use pqn_core::chsh::{linear_grid, read_sweep_csv, sweep_angular_difference, SweepConfig, SweepTable};
use pqn_core::AngleDeg;
use tokio::net::TcpStream;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::timeout;

use crate::config::Config;
use crate::daemon::{accept_loop, bind, DaemonHandle};
use crate::error::{NetError, NetResult};
use crate::fallback::fallback_result;
use crate::link::{client_hello, server_hello, Link, LinkName};
use crate::log::{ExperimentLogEntry, ResultsLog};
use crate::protocol::{read_message, write_message, CalibrateAction, ErrorCode, NodeRole, ProtocolError, ProtocolMessage};
use crate::station::Station;

type LogCmd = (ExperimentLogEntry, oneshot::Sender<NetResult<()>>);
type CalCmd = (CalibrateAction, oneshot::Sender<ProtocolMessage>);

/// The stored sweep from `kiosk.sweep_csv`, or a simulated one over
/// δ ∈ [−90°, 90°] at 1° from the configured source and link.
pub fn load_sweep_table(cfg: &Config) -> NetResult<SweepTable> {
    let points = match &cfg.kiosk.sweep_csv {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| NetError::Config(format!("{}: {e}", path.display())))?;
            read_sweep_csv(file)?
        }
        None => {
            let sweep = SweepConfig {
                source: cfg.source_config(),
                transmission: cfg.fiber_channel()?.transmission(),
                integration_s: cfg.source.integration_s,
                seed: cfg.kiosk.sweep_seed,
            };
            sweep_angular_difference(&sweep, &linear_grid(-90.0, 90.0, 181))?
        }
    };
    SweepTable::new(points).map_err(|e| NetError::Config(format!("sweep table: {e}")))
}

#[derive(Clone)]
struct Shared {
    cfg: Config,
    table: SweepTable,
    log: mpsc::Sender<LogCmd>,
    station: mpsc::Sender<CalCmd>,
    frames: broadcast::Sender<ProtocolMessage>,
}

async fn replay(shared: &Shared, a: f64, a_prime: f64, session_id: u64) -> ProtocolMessage {
    let result = match fallback_result(AngleDeg::new(a), AngleDeg::new(a_prime), Some(&shared.table)) {
        Ok(r) => r,
        Err(e) => return ProtocolMessage::error(ErrorCode::Rejected, e.to_string()),
    };
    let entry = ExperimentLogEntry::new(session_id, Vec::new(), result.clone());
    let (tx, rx) = oneshot::channel();
    if shared.log.send((entry, tx)).await.is_err() {
        return ProtocolMessage::error(ErrorCode::Storage, "log writer stopped");
    }
    match rx.await {
        Ok(Ok(())) => ProtocolMessage::ChshResult { session_id, result },
        Ok(Err(e)) => ProtocolMessage::error(ErrorCode::Storage, e.to_string()),
        Err(_) => ProtocolMessage::error(ErrorCode::Storage, "log writer stopped"),
    }
}

/// Runs one RUN_CHSH against the source lab, relaying PROGRESS and the
/// final CHSH_RESULT or ERROR to `out`.
async fn forward_run(shared: Shared, request: ProtocolMessage, out: mpsc::Sender<ProtocolMessage>) {
    let ProtocolMessage::RunChsh { a, a_prime, integration_s, session_id } = request else {
        return;
    };
    let nodes = &shared.cfg.nodes;
    let connect_timeout = Duration::from_secs_f64(nodes.step_timeout_s);
    let connected = timeout(connect_timeout, async {
        let stream = TcpStream::connect(nodes.source_addr).await?;
        stream.set_nodelay(true)?;
        let mut link = Link::new(stream, LinkName::Source, None);
        client_hello(&mut link, NodeRole::KioskGateway, &nodes.token, NodeRole::SourceLab).await?;
        Ok::<_, NetError>(link)
    })
    .await;
    let mut link = match connected {
        Ok(Ok(link)) => link,
        Ok(Err(e @ NetError::Remote { .. })) => {
            let _ = out.send(ProtocolMessage::error(e.code(), e.to_string())).await;
            return;
        }
        Ok(Err(e)) => {
            tracing::info!(error = %e, "source lab unreachable, replaying stored sweep");
            let _ = out.send(replay(&shared, a, a_prime, session_id).await).await;
            return;
        }
        Err(_) => {
            tracing::info!("source lab handshake timed out, replaying stored sweep");
            let _ = out.send(replay(&shared, a, a_prime, session_id).await).await;
            return;
        }
    };
    if let Err(e) = link.send(&ProtocolMessage::RunChsh { a, a_prime, integration_s, session_id }).await {
        let _ = out.send(ProtocolMessage::error(e.code(), e.to_string())).await;
        return;
    }
    // the source enforces per-step timeouts; this only guards a silent peer
    let guard = Duration::from_secs_f64(2.0 * nodes.step_timeout_s + integration_s.max(0.0) * nodes.time_scale + 1.0);
    loop {
        let msg = match timeout(guard, link.recv()).await {
            Ok(Ok(m)) => m,
            Ok(Err(e)) => ProtocolMessage::error(ErrorCode::NodeFailed, format!("source lab link lost: {e}")),
            Err(_) => ProtocolMessage::error(ErrorCode::Timeout, "source lab went silent"),
        };
        let terminal = !matches!(msg, ProtocolMessage::Progress { .. });
        if out.send(msg).await.is_err() || terminal {
            return;
        }
    }
}

async fn serve_client(stream: TcpStream, peer: SocketAddr, shared: Shared) {
    let mut link = Link::new(stream, LinkName::Kiosk, None);
    if let Err(e) = server_hello(&mut link, NodeRole::KioskGateway, &shared.cfg.nodes.token, &[NodeRole::KioskGateway]).await {
        tracing::warn!(%peer, error = %e, "handshake refused");
        return;
    }
    let (mut rd, mut wr) = tokio::io::split(link.into_inner());
    let (in_tx, mut in_rx) = mpsc::channel::<Result<ProtocolMessage, ProtocolError>>(16);
    let mut tasks = tokio::task::JoinSet::new();
    tasks.spawn(async move {
        loop {
            let m = read_message(&mut rd).await;
            let stop = m.is_err();
            if in_tx.send(m).await.is_err() || stop {
                break;
            }
        }
    });
    let (out_tx, mut out_rx) = mpsc::channel::<ProtocolMessage>(64);
    let mut frames = shared.frames.subscribe();
    loop {
        let outgoing = tokio::select! {
            incoming = in_rx.recv() => match incoming {
                Some(Ok(m @ ProtocolMessage::RunChsh { .. })) => {
                    tasks.spawn(forward_run(shared.clone(), m, out_tx.clone()));
                    None
                }
                Some(Ok(ProtocolMessage::Calibrate { action })) => {
                    let (tx, rx) = oneshot::channel();
                    let _ = shared.station.send((action, tx)).await;
                    Some(rx.await.unwrap_or_else(|_| ProtocolMessage::error(ErrorCode::Internal, "station stopped")))
                }
                Some(Ok(other)) => Some(ProtocolMessage::error(ErrorCode::Protocol, format!("unexpected {}", other.type_name()))),
                Some(Err(ProtocolError::Closed)) | None => break,
                Some(Err(e)) => Some(ProtocolMessage::error(ErrorCode::Protocol, e.to_string())),
            },
            Some(m) = out_rx.recv() => Some(m),
            frame = frames.recv() => match frame {
                Ok(m) => Some(m),
                Err(broadcast::error::RecvError::Lagged(_)) => None,
                Err(broadcast::error::RecvError::Closed) => break,
            },
        };
        if let Some(m) = outgoing {
            if write_message(&mut wr, &m).await.is_err() {
                break;
            }
        }
    }
}

pub async fn spawn_gateway(cfg: &Config) -> NetResult<DaemonHandle> {
    cfg.validate()?;
    let mut log = ResultsLog::open(&cfg.kiosk.log_path)?;
    let table = load_sweep_table(cfg)?;
    let (listener, addr) = bind(cfg.kiosk.listen_addr).await?;
    let (log_tx, mut log_rx) = mpsc::channel::<LogCmd>(16);
    let (cal_tx, cal_rx) = mpsc::channel::<CalCmd>(4);
    let (frames, _) = broadcast::channel(64);
    let station = Station::new(&cfg.kiosk);
    let shared = Shared { cfg: cfg.clone(), table, log: log_tx, station: cal_tx, frames: frames.clone() };
    let hz = cfg.kiosk.frame_hz;
    let task = tokio::spawn(async move {
        let writer = async move {
            while let Some((entry, ack)) = log_rx.recv().await {
                let _ = ack.send(log.append(&entry));
            }
        };
        let accept = accept_loop(listener, move |stream, peer| serve_client(stream, peer, shared.clone()));
        tokio::join!(writer, station.run(hz, frames, cal_rx), accept);
    });
    Ok(DaemonHandle::new(addr, task))
}
