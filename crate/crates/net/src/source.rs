//! Source-lab daemon: owns the session executor, the simulation engine and
//! the local waveplate/time tagger, and accepts RUN_CHSH from the gateway.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::time::Duration;

use chrono::Utc;
use pqn_core::chsh::{chsh_from_matrix, settings_from_user, ChshResult, MeasurementMatrix};
use pqn_core::{AnalyzerSetting, AngleDeg};
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::time::timeout;

use crate::config::Config;
use crate::daemon::{accept_loop, bind, serve_instrument, DaemonHandle, MotorHandle, Tagger};
use crate::error::{NetError, NetResult};
use crate::link::{client_hello, server_hello, Link, LinkName, WireTap};
use crate::log::{ExperimentLogEntry, ResultsLog};
use crate::motion::nearest_equivalent;
use crate::physics::{Physics, PhysicsHandle};
use crate::protocol::{read_message, write_message, ErrorCode, NodeRole, ProtocolError, ProtocolMessage};
use crate::session::{MeasurementNode, SessionMachine, STEPS};

#[derive(Debug, Clone, Default)]
pub struct SourceOptions {
    /// Receives every message the executor sends or receives on the
    /// closet and local instrument links.
    pub tap: Option<WireTap>,
}

struct RunRequest {
    a: f64,
    a_prime: f64,
    integration_s: f64,
    session_id: u64,
    reply: mpsc::Sender<ProtocolMessage>,
}

struct Executor {
    cfg: Config,
    physics: PhysicsHandle,
    local_motor: MotorHandle,
    log: ResultsLog,
    tap: Option<WireTap>,
    seen_sessions: HashSet<u64>,
    next_request: u64,
    /// Last confirmed mount positions, closet then local.
    positions: [f64; 2],
}

struct AbortOnDrop(tokio::task::JoinHandle<()>);

impl Drop for AbortOnDrop {
    fn drop(&mut self) {
        self.0.abort();
    }
}

fn timed_out(what: String) -> NetError {
    NetError::remote(ErrorCode::Timeout, what)
}

/// The plan's setting if the mount landed on its projector, otherwise the
/// transmitted setting the mount actually reports.
fn resolve(planned: AnalyzerSetting, actual_deg: f64) -> AnalyzerSetting {
    let landed = AnalyzerSetting::transmitted(actual_deg);
    if landed.same_projector(&planned) {
        planned
    } else {
        landed
    }
}

fn actual_angle(m: &ProtocolMessage) -> NetResult<f64> {
    match m {
        ProtocolMessage::AngleSet { actual_angle_deg, .. } => Ok(*actual_angle_deg),
        other => Err(NetError::remote(ErrorCode::Protocol, format!("expected ANGLE_SET, got {}", other.type_name()))),
    }
}

impl Executor {
    fn request_id(&mut self) -> u64 {
        self.next_request += 1;
        self.next_request
    }

    async fn run(mut self, mut rx: mpsc::Receiver<RunRequest>) {
        while let Some(req) = rx.recv().await {
            let outcome = {
                let session = self.session(&req);
                tokio::pin!(session);
                loop {
                    tokio::select! {
                        out = &mut session => break out,
                        Some(other) = rx.recv() => {
                            let busy = ProtocolMessage::error(
                                ErrorCode::Busy,
                                format!("session {} is running", req.session_id),
                            );
                            let _ = other.reply.send(busy).await;
                        }
                    }
                }
            };
            let msg = match outcome {
                Ok(result) => ProtocolMessage::ChshResult { session_id: req.session_id, result },
                Err(e) => {
                    tracing::warn!(session_id = req.session_id, error = %e, "session failed");
                    ProtocolMessage::error(e.code(), e.to_string())
                }
            };
            let _ = req.reply.send(msg).await;
        }
    }

    async fn session(&mut self, req: &RunRequest) -> NetResult<ChshResult> {
        let rejected = |d: &str| Err(NetError::remote(ErrorCode::Rejected, d));
        if !(req.a.is_finite() && req.a_prime.is_finite()) {
            return rejected("angles must be finite");
        }
        if !(req.integration_s > 0.0 && req.integration_s.is_finite()) {
            return rejected("integration time must be positive");
        }
        if !self.seen_sessions.insert(req.session_id) {
            return rejected("session id already used");
        }
        let settings = settings_from_user(AngleDeg::new(req.a), AngleDeg::new(req.a_prime));
        let mut machine = SessionMachine::new();
        let result = self.measure(req, settings, &mut machine).await;
        if result.is_err() {
            machine.fail();
        }
        result
    }

    async fn measure(
        &mut self,
        req: &RunRequest,
        settings: pqn_core::chsh::ChshSettings,
        machine: &mut SessionMachine,
    ) -> NetResult<ChshResult> {
        let step_timeout = Duration::from_secs_f64(self.cfg.nodes.step_timeout_s);
        let token = self.cfg.nodes.token.clone();
        let internal = |e: crate::session::TransitionError| NetError::remote(ErrorCode::Internal, e.to_string());

        let closet_addr = self.cfg.nodes.closet_addr;
        let mut closet = timeout(step_timeout, async {
            let stream = TcpStream::connect(closet_addr).await?;
            stream.set_nodelay(true)?;
            let mut link = Link::new(stream, LinkName::Closet, self.tap.clone());
            client_hello(&mut link, NodeRole::SourceLab, &token, NodeRole::ClosetWaveplate).await?;
            Ok::<_, NetError>(link)
        })
        .await
        .map_err(|_| timed_out(format!("closet at {closet_addr} did not answer")))?
        .map_err(|e| match e {
            NetError::Remote { .. } => e,
            other => NetError::remote(ErrorCode::NodeUnreachable, format!("closet at {closet_addr}: {other}")),
        })?;

        let (ours, theirs) = tokio::io::duplex(64 * 1024);
        let bench = {
            let motor = self.local_motor.clone();
            let tagger = Tagger { physics: self.physics.clone(), time_scale: self.cfg.nodes.time_scale };
            let token = token.clone();
            AbortOnDrop(tokio::spawn(async move {
                let mut link = Link::new(theirs, LinkName::Local, None);
                if server_hello(&mut link, NodeRole::SourceLab, &token, &[NodeRole::SourceLab]).await.is_ok() {
                    let _ = serve_instrument(link, NodeRole::SourceLab, motor, Some(tagger)).await;
                }
            }))
        };
        let mut local = Link::new(ours, LinkName::Local, self.tap.clone());
        client_hello(&mut local, NodeRole::SourceLab, &token, NodeRole::SourceLab).await?;

        let count_timeout = step_timeout + Duration::from_secs_f64(req.integration_s * self.cfg.nodes.time_scale);
        let mut records = Vec::with_capacity(STEPS as usize);
        for (k, (signal, idler)) in settings.measurement_plan().into_iter().enumerate() {
            let step = k as u32 + 1;
            machine.configure(step).map_err(internal)?;
            let sig_target = nearest_equivalent(self.positions[0], signal.projected_angle().degrees());
            let idl_target = nearest_equivalent(self.positions[1], idler.projected_angle().degrees());
            let (rs, ri) = (self.request_id(), self.request_id());
            let to_closet = ProtocolMessage::SetAngle { target_node: NodeRole::ClosetWaveplate, angle_deg: sig_target, request_id: rs };
            let to_local = ProtocolMessage::SetAngle { target_node: NodeRole::SourceLab, angle_deg: idl_target, request_id: ri };
            let (ack_s, ack_i) = timeout(step_timeout, async {
                tokio::try_join!(closet.request(&to_closet, rs), local.request(&to_local, ri))
            })
            .await
            .map_err(|_| timed_out(format!("step {step}: waveplates did not confirm")))??;
            let (got_s, got_i) = (actual_angle(&ack_s)?, actual_angle(&ack_i)?);
            self.positions = [got_s, got_i];
            machine.confirm(MeasurementNode::Closet).map_err(internal)?;
            machine.confirm(MeasurementNode::Local).map_err(internal)?;

            self.physics.arm(resolve(signal, got_s), resolve(idler, got_i)).await?;
            machine.count().map_err(internal)?;
            let rc = self.request_id();
            let start = ProtocolMessage::StartCount { duration_s: req.integration_s, request_id: rc };
            let report = timeout(count_timeout, local.request(&start, rc))
                .await
                .map_err(|_| timed_out(format!("step {step}: no count report")))??;
            match report {
                ProtocolMessage::CountReport { record, .. } => records.push(record),
                other => {
                    return Err(NetError::remote(
                        ErrorCode::Protocol,
                        format!("expected COUNT_REPORT, got {}", other.type_name()),
                    ))
                }
            }
            let _ = req.reply.send(ProtocolMessage::Progress { session_id: req.session_id, step, of: STEPS }).await;
        }
        drop(bench);

        machine.compute().map_err(internal)?;
        let matrix = MeasurementMatrix::from_records(settings, records)?;
        let result = chsh_from_matrix(&matrix, Utc::now())?;
        let entry = ExperimentLogEntry::new(req.session_id, matrix.into_records(), result.clone());
        self.log.append(&entry)?;
        machine.finish().map_err(internal)?;
        Ok(result)
    }
}

/// Per-gateway connection: forwards RUN_CHSH to the executor and streams its
/// replies back.
async fn serve_gateway(stream: TcpStream, peer: SocketAddr, token: String, exec: mpsc::Sender<RunRequest>) {
    let mut link = Link::new(stream, LinkName::Kiosk, None);
    if let Err(e) = server_hello(&mut link, NodeRole::SourceLab, &token, &[NodeRole::KioskGateway]).await {
        tracing::warn!(%peer, error = %e, "handshake refused");
        return;
    }
    let (mut rd, mut wr) = tokio::io::split(link.into_inner());
    let (in_tx, mut in_rx) = mpsc::channel::<Result<ProtocolMessage, ProtocolError>>(16);
    let _reader = AbortOnDrop(tokio::spawn(async move {
        loop {
            let m = read_message(&mut rd).await;
            let stop = m.is_err();
            if in_tx.send(m).await.is_err() || stop {
                break;
            }
        }
    }));
    let (out_tx, mut out_rx) = mpsc::channel::<ProtocolMessage>(32);
    loop {
        tokio::select! {
            Some(incoming) = in_rx.recv() => {
                let reply = match incoming {
                    Ok(ProtocolMessage::RunChsh { a, a_prime, integration_s, session_id }) => {
                        let req = RunRequest { a, a_prime, integration_s, session_id, reply: out_tx.clone() };
                        if exec.send(req).await.is_err() {
                            Some(ProtocolMessage::error(ErrorCode::Internal, "executor stopped"))
                        } else {
                            None
                        }
                    }
                    Ok(other) => Some(ProtocolMessage::error(ErrorCode::Protocol, format!("unexpected {}", other.type_name()))),
                    Err(ProtocolError::Closed) => break,
                    Err(e) => Some(ProtocolMessage::error(ErrorCode::Protocol, e.to_string())),
                };
                if let Some(r) = reply {
                    if write_message(&mut wr, &r).await.is_err() {
                        break;
                    }
                }
            }
            Some(out) = out_rx.recv() => {
                if write_message(&mut wr, &out).await.is_err() {
                    break;
                }
            }
            else => break,
        }
    }
}

pub async fn spawn_source(cfg: &Config, opts: SourceOptions) -> NetResult<DaemonHandle> {
    cfg.validate()?;
    let log = ResultsLog::open(&cfg.source.log_path)?;
    let physics = Physics::from_config(cfg)?;
    let (listener, addr) = bind(cfg.nodes.source_addr).await?;
    let (physics, physics_run) = physics.start();
    let (local_motor, motor_run) = MotorHandle::start(cfg.motion_model(), cfg.nodes.time_scale);
    let (exec_tx, exec_rx) = mpsc::channel(8);
    let executor = Executor {
        cfg: cfg.clone(),
        physics,
        local_motor,
        log,
        tap: opts.tap,
        seen_sessions: HashSet::new(),
        next_request: 0,
        positions: [0.0; 2],
    };
    let token = cfg.nodes.token.clone();
    let task = tokio::spawn(async move {
        let accept = accept_loop(listener, move |stream, peer| serve_gateway(stream, peer, token.clone(), exec_tx.clone()));
        tokio::join!(physics_run, motor_run, executor.run(exec_rx), accept);
    });
    Ok(DaemonHandle::new(addr, task))
}
