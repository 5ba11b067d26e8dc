//! Shared daemon plumbing: lifecycle handle, scaled sleeps, and the
//! waveplate/time-tagger instrument server used by the closet node and by
//! the source lab's own bench.

use std::future::Future;
use std::net::SocketAddr;
use std::time::Duration;

use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio::task::{JoinError, JoinHandle, JoinSet};

use crate::config::Config;
use crate::error::{NetError, NetResult};
use crate::link::{server_hello, Link, LinkName};
use crate::motion::{waveplate_motion, MotionModel};
use crate::physics::PhysicsHandle;
use crate::protocol::{ErrorCode, NodeRole, ProtocolMessage};

/// A running daemon. Dropping the handle stops it and closes its
/// connections.
#[derive(Debug)]
pub struct DaemonHandle {
    addr: SocketAddr,
    task: Option<JoinHandle<()>>,
}

impl DaemonHandle {
    pub(crate) fn new(addr: SocketAddr, task: JoinHandle<()>) -> Self {
        DaemonHandle { addr, task: Some(task) }
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Kills the daemon and every connection it holds.
    pub fn abort(&mut self) {
        if let Some(t) = &self.task {
            t.abort();
        }
    }

    pub async fn wait(mut self) -> Result<(), JoinError> {
        match self.task.take() {
            Some(t) => t.await,
            None => Ok(()),
        }
    }
}

impl Drop for DaemonHandle {
    fn drop(&mut self) {
        self.abort();
    }
}

pub(crate) async fn sleep_scaled(seconds: f64, scale: f64) {
    let wall = seconds * scale;
    if wall > 0.0 {
        tokio::time::sleep(Duration::from_secs_f64(wall)).await;
    }
}

pub(crate) async fn bind(addr: SocketAddr) -> NetResult<(TcpListener, SocketAddr)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

/// Accepts connections forever, running `handler` for each inside a task
/// set that dies with this future.
pub(crate) async fn accept_loop<F, Fut>(listener: TcpListener, handler: F)
where
    F: Fn(tokio::net::TcpStream, SocketAddr) -> Fut,
    Fut: Future<Output = ()> + Send + 'static,
{
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let _ = stream.set_nodelay(true);
                    conns.spawn(handler(stream, peer));
                }
                Err(e) => tracing::warn!(error = %e, "accept failed"),
            },
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
}

/// Motor of one rotation mount; moves are serialized by its own task.
#[derive(Clone)]
pub struct MotorHandle(mpsc::Sender<(f64, oneshot::Sender<f64>)>);

impl MotorHandle {
    pub fn start(model: MotionModel, time_scale: f64) -> (MotorHandle, impl Future<Output = ()> + Send) {
        let (tx, mut rx) = mpsc::channel::<(f64, oneshot::Sender<f64>)>(4);
        let run = async move {
            let mut position = 0.0;
            while let Some((target, reply)) = rx.recv().await {
                sleep_scaled(waveplate_motion(&model, position, target), time_scale).await;
                position = target;
                let _ = reply.send(position);
            }
        };
        (MotorHandle(tx), run)
    }

    pub async fn move_to(&self, target_deg: f64) -> NetResult<f64> {
        let stopped = || NetError::remote(ErrorCode::NodeFailed, "motor stopped");
        let (tx, rx) = oneshot::channel();
        self.0.send((target_deg, tx)).await.map_err(|_| stopped())?;
        rx.await.map_err(|_| stopped())
    }
}

pub(crate) struct Tagger {
    pub physics: PhysicsHandle,
    pub time_scale: f64,
}

/// Answers SET_ANGLE (and START_COUNT when a tagger is attached) until the
/// peer hangs up.
pub(crate) async fn serve_instrument<S: AsyncRead + AsyncWrite + Unpin>(
    mut link: Link<S>,
    role: NodeRole,
    motor: MotorHandle,
    tagger: Option<Tagger>,
) -> NetResult<()> {
    loop {
        let m = match link.recv().await {
            Ok(m) => m,
            Err(NetError::Protocol(crate::protocol::ProtocolError::Closed)) => return Ok(()),
            Err(e) => return Err(e),
        };
        let reply = match m {
            ProtocolMessage::SetAngle { target_node, angle_deg, request_id } if target_node == role => {
                match motor.move_to(angle_deg).await {
                    Ok(actual) => ProtocolMessage::AngleSet { request_id, actual_angle_deg: actual },
                    Err(e) => ProtocolMessage::error(e.code(), e.to_string()),
                }
            }
            ProtocolMessage::SetAngle { target_node, .. } => {
                ProtocolMessage::error(ErrorCode::Rejected, format!("this node is {role:?}, not {target_node:?}"))
            }
            ProtocolMessage::StartCount { duration_s, request_id } => match &tagger {
                Some(_) if !(duration_s > 0.0) => {
                    ProtocolMessage::error(ErrorCode::Rejected, format!("duration {duration_s} s must be positive"))
                }
                Some(t) => {
                    sleep_scaled(duration_s, t.time_scale).await;
                    match t.physics.count(duration_s).await {
                        Ok(record) => ProtocolMessage::CountReport { request_id, record },
                        Err(e) => ProtocolMessage::error(e.code(), e.to_string()),
                    }
                }
                None => ProtocolMessage::error(ErrorCode::Rejected, "no time tagger on this node"),
            },
            other => ProtocolMessage::error(ErrorCode::Protocol, format!("unexpected {}", other.type_name())),
        };
        link.send(&reply).await?;
    }
}

/// Remote basis motor in the library closet.
pub async fn spawn_closet(cfg: &Config) -> NetResult<DaemonHandle> {
    cfg.validate()?;
    let (listener, addr) = bind(cfg.nodes.closet_addr).await?;
    let (motor, motor_run) = MotorHandle::start(cfg.motion_model(), cfg.nodes.time_scale);
    let token = cfg.nodes.token.clone();
    let task = tokio::spawn(async move {
        let accept = accept_loop(listener, move |stream, peer| {
            let motor = motor.clone();
            let token = token.clone();
            async move {
                let mut link = Link::new(stream, LinkName::Source, None);
                if let Err(e) = server_hello(&mut link, NodeRole::ClosetWaveplate, &token, &[NodeRole::SourceLab]).await {
                    tracing::warn!(%peer, error = %e, "handshake refused");
                    return;
                }
                if let Err(e) = serve_instrument(link, NodeRole::ClosetWaveplate, motor, None).await {
                    tracing::warn!(%peer, error = %e, "closet connection ended");
                }
            }
        });
        tokio::join!(motor_run, accept);
    });
    Ok(DaemonHandle::new(addr, task))
}
