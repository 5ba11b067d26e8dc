//! Client for the gateway's kiosk port, used by the CLI and tests.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use pqn_core::analyzer::AnalyzerFrame;
use pqn_core::chsh::ChshResult;
use tokio::net::TcpStream;

use crate::error::{NetError, NetResult};
use crate::link::{client_hello, Link, LinkName};
use crate::protocol::{CalibrateAction, ErrorCode, NodeRole, ProtocolMessage};

/// Session id unique within this process and, via the clock, across runs.
pub fn new_session_id() -> u64 {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
    nanos.wrapping_add(COUNTER.fetch_add(1, Ordering::Relaxed))
}

pub struct KioskClient {
    link: Link<TcpStream>,
}

impl KioskClient {
    pub async fn connect(addr: SocketAddr, token: &str) -> NetResult<Self> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let mut link = Link::new(stream, LinkName::Kiosk, None);
        client_hello(&mut link, NodeRole::KioskGateway, token, NodeRole::KioskGateway).await?;
        Ok(KioskClient { link })
    }

    pub async fn send(&mut self, m: &ProtocolMessage) -> NetResult<()> {
        self.link.send(m).await
    }

    pub async fn recv(&mut self) -> NetResult<ProtocolMessage> {
        self.link.recv().await
    }

    /// Submits a run and waits for its result, reporting each PROGRESS.
    /// FRAME samples arriving meanwhile are skipped.
    pub async fn run_chsh(
        &mut self,
        a: f64,
        a_prime: f64,
        integration_s: f64,
        session_id: u64,
        mut on_progress: impl FnMut(u32, u32),
    ) -> NetResult<ChshResult> {
        if !(a.is_finite() && a_prime.is_finite()) {
            return Err(NetError::remote(ErrorCode::Rejected, "angles must be finite"));
        }
        self.send(&ProtocolMessage::RunChsh { a, a_prime, integration_s, session_id }).await?;
        loop {
            match self.recv().await? {
                ProtocolMessage::Progress { session_id: s, step, of } if s == session_id => on_progress(step, of),
                ProtocolMessage::ChshResult { session_id: s, result } if s == session_id => return Ok(result),
                ProtocolMessage::Error { code, detail } => return Err(NetError::Remote { code, detail }),
                _ => {}
            }
        }
    }

    pub async fn calibrate(&mut self, action: CalibrateAction) -> NetResult<()> {
        self.send(&ProtocolMessage::Calibrate { action }).await?;
        loop {
            match self.recv().await? {
                ProtocolMessage::Calibrate { action: a } if a == action => return Ok(()),
                ProtocolMessage::Error { code, detail } => return Err(NetError::Remote { code, detail }),
                _ => {}
            }
        }
    }

    pub async fn next_frame(&mut self) -> NetResult<(AnalyzerFrame, Option<f64>)> {
        loop {
            if let ProtocolMessage::Frame { frame, angle_deg } = self.recv().await? {
                return Ok((frame, angle_deg));
            }
        }
    }
}
