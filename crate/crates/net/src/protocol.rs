//! Framed wire protocol spoken between the daemons and kiosk clients.
//!
//! A frame is a 4-byte big-endian unsigned payload length followed by a
//! UTF-8 JSON object. The object's `type` field names the variant in
//! upper snake case (`SET_ANGLE`, `COUNT_REPORT`, ...); the remaining fields
//! are the variant's payload:
//!
//! | type          | fields                                            |
//! |---------------|---------------------------------------------------|
//! | `HELLO`       | `role`, `version`, `token`                        |
//! | `SET_ANGLE`   | `target_node`, `angle_deg`, `request_id`          |
//! | `ANGLE_SET`   | `request_id`, `actual_angle_deg`                  |
//! | `START_COUNT` | `duration_s`, `request_id`                        |
//! | `COUNT_REPORT`| `request_id`, `record`                            |
//! | `RUN_CHSH`    | `a`, `a_prime`, `integration_s`, `session_id`     |
//! | `PROGRESS`    | `session_id`, `step`, `of`                        |
//! | `CHSH_RESULT` | `session_id`, `result`                            |
//! | `FRAME`       | `frame`, `angle_deg` (null until calibrated)      |
//! | `CALIBRATE`   | `action` (`reset` or `done`)                      |
//! | `ERROR`       | `code`, `detail`                                  |
//!
//! `angle_deg` in `SET_ANGLE` is the analyzer's transmitted polarization
//! angle; the orthogonal port is requested as that angle plus 90°.

use pqn_core::analyzer::AnalyzerFrame;
use pqn_core::chsh::ChshResult;
use pqn_core::counting::CountRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_FRAME_BYTES: usize = 1 << 20;
const HEADER: usize = 4;

pub const MESSAGE_TYPES: [&str; 11] = [
    "HELLO",
    "SET_ANGLE",
    "ANGLE_SET",
    "START_COUNT",
    "COUNT_REPORT",
    "RUN_CHSH",
    "PROGRESS",
    "CHSH_RESULT",
    "FRAME",
    "CALIBRATE",
    "ERROR",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    SourceLab,
    ClosetWaveplate,
    KioskGateway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Version,
    Auth,
    Busy,
    Timeout,
    NodeUnreachable,
    NodeFailed,
    Rejected,
    Protocol,
    Storage,
    Internal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrateAction {
    Reset,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProtocolMessage {
    Hello { role: NodeRole, version: u32, token: String },
    SetAngle { target_node: NodeRole, angle_deg: f64, request_id: u64 },
    AngleSet { request_id: u64, actual_angle_deg: f64 },
    StartCount { duration_s: f64, request_id: u64 },
    CountReport { request_id: u64, record: CountRecord },
    RunChsh { a: f64, a_prime: f64, integration_s: f64, session_id: u64 },
    Progress { session_id: u64, step: u32, of: u32 },
    ChshResult { session_id: u64, result: ChshResult },
    Frame { frame: AnalyzerFrame, angle_deg: Option<f64> },
    Calibrate { action: CalibrateAction },
    Error { code: ErrorCode, detail: String },
}

impl ProtocolMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            ProtocolMessage::Hello { .. } => "HELLO",
            ProtocolMessage::SetAngle { .. } => "SET_ANGLE",
            ProtocolMessage::AngleSet { .. } => "ANGLE_SET",
            ProtocolMessage::StartCount { .. } => "START_COUNT",
            ProtocolMessage::CountReport { .. } => "COUNT_REPORT",
            ProtocolMessage::RunChsh { .. } => "RUN_CHSH",
            ProtocolMessage::Progress { .. } => "PROGRESS",
            ProtocolMessage::ChshResult { .. } => "CHSH_RESULT",
            ProtocolMessage::Frame { .. } => "FRAME",
            ProtocolMessage::Calibrate { .. } => "CALIBRATE",
            ProtocolMessage::Error { .. } => "ERROR",
        }
    }

    /// Request id carried by a node response, if any.
    pub fn response_id(&self) -> Option<u64> {
        match self {
            ProtocolMessage::AngleSet { request_id, .. } | ProtocolMessage::CountReport { request_id, .. } => {
                Some(*request_id)
            }
            _ => None,
        }
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ProtocolMessage::Error { code, detail: detail.into() }
    }

    fn check_ranges(&self) -> Result<(), ProtocolError> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ProtocolError::OutOfRange(format!("{name} = {v}")))
            }
        };
        match self {
            ProtocolMessage::SetAngle { angle_deg, .. } => finite("angle_deg", *angle_deg),
            ProtocolMessage::AngleSet { actual_angle_deg, .. } => finite("actual_angle_deg", *actual_angle_deg),
            ProtocolMessage::StartCount { duration_s, .. } => finite("duration_s", *duration_s),
            ProtocolMessage::RunChsh { a, a_prime, integration_s, .. } => {
                finite("a", *a)?;
                finite("a_prime", *a_prime)?;
                finite("integration_s", *integration_s)
            }
            ProtocolMessage::Frame { angle_deg: Some(v), .. } => finite("angle_deg", *v),
            ProtocolMessage::CountReport { record, .. } => finite("duration_s", record.duration_s),
            ProtocolMessage::ChshResult { result, .. } => {
                finite("s_value", result.s_value)?;
                finite("sigma_s", result.sigma_s)
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("incomplete frame: {needed} more bytes needed")]
    Incomplete { needed: usize },
    #[error("frame payload of {0} bytes exceeds the 1 MiB limit")]
    Oversize(usize),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("field out of range: {0}")]
    OutOfRange(String),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_message(m: &ProtocolMessage) -> Result<Vec<u8>, ProtocolError> {
    m.check_ranges()?;
    let payload = serde_json::to_vec(m).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if payload.len() > MAX_FRAME_BYTES {
        return Err(ProtocolError::Oversize(payload.len()));
    }
    let mut frame = Vec::with_capacity(HEADER + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Parses one payload (without the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<ProtocolMessage, ProtocolError> {
    let value: serde_json::Value = serde_json::from_slice(payload).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let Some(kind) = value.get("type").and_then(|t| t.as_str()) else {
        return Err(ProtocolError::Malformed("missing \"type\" field".into()));
    };
    if !MESSAGE_TYPES.contains(&kind) {
        return Err(ProtocolError::UnknownType(kind.to_owned()));
    }
    let m: ProtocolMessage = serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    m.check_ranges()?;
    Ok(m)
}

/// Decodes the first frame in `bytes`, returning the message and the number
/// of bytes it occupied. A short buffer yields `Incomplete` and nothing is
/// consumed.
pub fn decode_message(bytes: &[u8]) -> Result<(ProtocolMessage, usize), ProtocolError> {
    if bytes.len() < HEADER {
        return Err(ProtocolError::Incomplete { needed: HEADER - bytes.len() });
    }
    let len = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(ProtocolError::Oversize(len));
    }
    let total = HEADER + len;
    if bytes.len() < total {
        return Err(ProtocolError::Incomplete { needed: total - bytes.len() });
    }
    Ok((decode_payload(&bytes[HEADER..total])?, total))
}

/// Accumulates stream bytes and yields whole messages.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// `Ok(None)` while the next frame is incomplete. A bad frame is
    /// dropped from the buffer before its error is returned; an oversize
    /// header leaves the buffer untouched.
    pub fn next_message(&mut self) -> Result<Option<ProtocolMessage>, ProtocolError> {
        match decode_message(&self.buf) {
            Ok((m, used)) => {
                self.buf.drain(..used);
                Ok(Some(m))
            }
            Err(ProtocolError::Incomplete { .. }) => Ok(None),
            Err(e @ (ProtocolError::UnknownType(_) | ProtocolError::Malformed(_) | ProtocolError::OutOfRange(_))) => {
                let len = u32::from_be_bytes([self.buf[0], self.buf[1], self.buf[2], self.buf[3]]) as usize;
                self.buf.drain(..HEADER + len);
                Err(e)
            }
            Err(e) => Err(e),
        }
    }
}

pub async fn read_message<R: AsyncRead + Unpin>(r: &mut R) -> Result<ProtocolMessage, ProtocolError> {
    let mut header = [0u8; HEADER];
    match r.read_exact(&mut header).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Err(ProtocolError::Closed),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(ProtocolError::Oversize(len));
    }
    let mut payload = vec![0u8; len];
    match r.read_exact(&mut payload).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Err(ProtocolError::Closed),
        Err(e) => return Err(e.into()),
    }
    decode_payload(&payload)
}

pub async fn write_message<W: AsyncWrite + Unpin>(w: &mut W, m: &ProtocolMessage) -> Result<(), ProtocolError> {
    let frame = encode_message(m)?;
    w.write_all(&frame).await?;
    w.flush().await?;
    Ok(())
}
