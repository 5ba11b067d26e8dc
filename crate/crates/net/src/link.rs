//! A framed connection with request/response bookkeeping and an optional
//! wire tap.

use std::collections::HashSet;

use serde::Serialize;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::sync::mpsc;

use crate::error::{NetError, NetResult};
use crate::protocol::{read_message, write_message, ErrorCode, NodeRole, ProtocolMessage, PROTOCOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkName {
    Closet,
    Local,
    Source,
    Kiosk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Sent,
    Received,
}

/// One message observed on a link. Responses that were dropped as
/// duplicates or strays carry `accepted == false`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WireEvent {
    pub link: LinkName,
    pub direction: Direction,
    pub accepted: bool,
    pub message: ProtocolMessage,
}

pub type WireTap = mpsc::UnboundedSender<WireEvent>;

pub struct Link<S> {
    stream: S,
    name: LinkName,
    tap: Option<WireTap>,
    answered: HashSet<u64>,
    dropped: u64,
}

impl<S: AsyncRead + AsyncWrite + Unpin> Link<S> {
    pub fn new(stream: S, name: LinkName, tap: Option<WireTap>) -> Self {
        Link { stream, name, tap, answered: HashSet::new(), dropped: 0 }
    }

    /// Responses discarded so far because their request was already
    /// answered or never issued on this link.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn observe(&self, direction: Direction, accepted: bool, m: &ProtocolMessage) {
        if let Some(tap) = &self.tap {
            let _ = tap.send(WireEvent { link: self.name, direction, accepted, message: m.clone() });
        }
    }

    pub async fn send(&mut self, m: &ProtocolMessage) -> NetResult<()> {
        write_message(&mut self.stream, m).await?;
        self.observe(Direction::Sent, true, m);
        Ok(())
    }

    pub async fn recv(&mut self) -> NetResult<ProtocolMessage> {
        let m = read_message(&mut self.stream).await?;
        self.observe(Direction::Received, true, &m);
        Ok(m)
    }

    /// Sends a request carrying `request_id` and waits for the single
    /// response with that id. An ERROR from the peer fails the request.
    pub async fn request(&mut self, m: &ProtocolMessage, request_id: u64) -> NetResult<ProtocolMessage> {
        self.send(m).await?;
        loop {
            let reply = read_message(&mut self.stream).await?;
            match reply.response_id() {
                Some(id) if id == request_id && self.answered.insert(id) => {
                    self.observe(Direction::Received, true, &reply);
                    return Ok(reply);
                }
                Some(id) => {
                    self.dropped += 1;
                    self.observe(Direction::Received, false, &reply);
                    tracing::warn!(link = ?self.name, request_id = id, "dropped duplicate or stray response");
                }
                None => {
                    self.observe(Direction::Received, true, &reply);
                    return match reply {
                        ProtocolMessage::Error { code, detail } => Err(NetError::Remote { code, detail }),
                        other => Err(NetError::remote(
                            ErrorCode::Protocol,
                            format!("unexpected {} while awaiting request {request_id}", other.type_name()),
                        )),
                    };
                }
            }
        }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

fn hello(role: NodeRole, token: &str) -> ProtocolMessage {
    ProtocolMessage::Hello { role, version: PROTOCOL_VERSION, token: token.to_owned() }
}

/// Dialer side of the handshake.
pub async fn client_hello<S: AsyncRead + AsyncWrite + Unpin>(
    link: &mut Link<S>,
    role: NodeRole,
    token: &str,
    expect: NodeRole,
) -> NetResult<()> {
    link.send(&hello(role, token)).await?;
    match link.recv().await? {
        ProtocolMessage::Hello { role: peer, version, .. } if peer == expect && version == PROTOCOL_VERSION => Ok(()),
        ProtocolMessage::Hello { role: peer, version, .. } => Err(NetError::remote(
            ErrorCode::Protocol,
            format!("expected {expect:?} v{PROTOCOL_VERSION}, peer is {peer:?} v{version}"),
        )),
        ProtocolMessage::Error { code, detail } => Err(NetError::Remote { code, detail }),
        other => Err(NetError::remote(ErrorCode::Protocol, format!("expected HELLO, got {}", other.type_name()))),
    }
}

/// Listener side: checks version, token and role, answers with our own
/// HELLO, and returns the peer's role. Rejections are reported to the peer
/// with an ERROR before failing.
pub async fn server_hello<S: AsyncRead + AsyncWrite + Unpin>(
    link: &mut Link<S>,
    role: NodeRole,
    token: &str,
    accept: &[NodeRole],
) -> NetResult<NodeRole> {
    let first = link.recv().await?;
    let (code, detail) = match first {
        ProtocolMessage::Hello { version, .. } if version != PROTOCOL_VERSION => {
            (ErrorCode::Version, format!("protocol version {version} unsupported, expected {PROTOCOL_VERSION}"))
        }
        ProtocolMessage::Hello { token: t, .. } if t != token => (ErrorCode::Auth, "token mismatch".to_owned()),
        ProtocolMessage::Hello { role: peer, .. } if !accept.contains(&peer) => {
            (ErrorCode::Rejected, format!("{peer:?} may not connect to {role:?}"))
        }
        ProtocolMessage::Hello { role: peer, .. } => {
            link.send(&hello(role, token)).await?;
            return Ok(peer);
        }
        other => (ErrorCode::Protocol, format!("expected HELLO, got {}", other.type_name())),
    };
    link.send(&ProtocolMessage::error(code, detail.clone())).await?;
    Err(NetError::Remote { code, detail })
}
