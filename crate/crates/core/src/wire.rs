//! Length-prefixed frames shared by the measurement daemons, the return-trip
//! acknowledgments and the data generator's control channel.
//!
//! ```text
//! u32 BE length | u8 msg_type | u32 BE seq | payload
//! ```
//! `length` counts every byte after the length field.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const HEADER_LEN: usize = 5;
pub const MAX_FRAME_LEN: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    ProbeReq = 1,
    ProbeResp = 2,
    Register = 3,
    MeasureCmd = 4,
    Result = 5,
    RetAck = 6,
}

impl TryFrom<u8> for MsgType {
    type Error = WireError;
    fn try_from(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            1 => MsgType::ProbeReq,
            2 => MsgType::ProbeResp,
            3 => MsgType::Register,
            4 => MsgType::MeasureCmd,
            5 => MsgType::Result,
            6 => MsgType::RetAck,
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("bad frame length {0}")]
    BadLength(usize),
    #[error("bad payload for {0:?}: expected {1} bytes, got {2}")]
    BadPayload(MsgType, usize, usize),
}

impl WireError {
    /// Read timed out or the peer closed the stream.
    pub fn is_timeout(&self) -> bool {
        matches!(self, WireError::Io(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
    }

    pub fn is_eof(&self) -> bool {
        matches!(self, WireError::Io(e) if e.kind() == io::ErrorKind::UnexpectedEof)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, seq: u32, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            seq,
            payload,
        }
    }

    pub fn with_u64(msg_type: MsgType, seq: u32, value: u64) -> Self {
        Self::new(msg_type, seq, value.to_be_bytes().to_vec())
    }

    /// Payload read as a single big-endian u64.
    pub fn payload_u64(&self) -> Result<u64, WireError> {
        let bytes: [u8; 8] = self
            .payload
            .as_slice()
            .try_into()
            .map_err(|_| WireError::BadPayload(self.msg_type, 8, self.payload.len()))?;
        Ok(u64::from_be_bytes(bytes))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(4 + HEADER_LEN + self.payload.len());
        self.encode_into(&mut buf);
        buf
    }

    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        let len = (HEADER_LEN + self.payload.len()) as u32;
        buf.extend_from_slice(&len.to_be_bytes());
        buf.push(self.msg_type as u8);
        buf.extend_from_slice(&self.seq.to_be_bytes());
        buf.extend_from_slice(&self.payload);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        read_frame(&mut &bytes[..])
    }
}

/// Writes the frame with a single `write_all`.
pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    w.write_all(&frame.encode())?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, WireError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if !(HEADER_LEN..=MAX_FRAME_LEN).contains(&len) {
        return Err(WireError::BadLength(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let msg_type = MsgType::try_from(body[0])?;
    let seq = u32::from_be_bytes(body[1..5].try_into().unwrap());
    body.drain(..HEADER_LEN);
    Ok(Frame {
        msg_type,
        seq,
        payload: body,
    })
}
