//! Control channel between sender and receiver, on the shared daemon framing.
//!
//! The sender opens a run with an empty `Register` frame, which the receiver
//! echoes after starting a new run; only data connections opened after that
//! count towards it. After the run the sender sends `Result` carrying
//! [`RunCounts`] with its sent count; the receiver gives the sink up to its
//! grace period to catch up, then answers with the ingested count filled in.

use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::Ordering;
use std::time::Duration;

use cp_core::wire::{read_frame, write_frame, Frame, MsgType, WireError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jof::{wait_for_run, ReceiverStats};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub sent: u64,
    pub ingested: u64,
    #[serde(default)]
    pub malformed: u64,
    #[serde(default)]
    pub order_violations: u64,
    #[serde(default)]
    pub stalls: u64,
}

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("bad control payload: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected {0:?} frame")]
    Unexpected(MsgType),
}

impl From<io::Error> for ControlError {
    fn from(e: io::Error) -> Self {
        ControlError::Wire(e.into())
    }
}

/// Receiver side of one control connection.
pub fn serve(mut conn: TcpStream, stats: &ReceiverStats, grace: Duration) -> Result<(), ControlError> {
    let snapshot = |s: &ReceiverStats| {
        (
            s.run_ingested(),
            s.malformed.load(Ordering::Relaxed),
            s.order_violations.load(Ordering::Relaxed),
            s.stalls.load(Ordering::Relaxed),
        )
    };
    let mut base = snapshot(stats);
    loop {
        let frame = match read_frame(&mut conn) {
            Ok(f) => f,
            Err(e) if e.is_eof() => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        match frame.msg_type {
            MsgType::Register => {
                stats.begin_run();
                base = snapshot(stats);
                write_frame(&mut conn, &Frame::new(MsgType::Register, frame.seq, Vec::new()))?;
            }
            MsgType::Result => {
                let req: RunCounts = serde_json::from_slice(&frame.payload)?;
                let ingested = wait_for_run(stats, req.sent, grace);
                let now = snapshot(stats);
                let reply = RunCounts {
                    sent: req.sent,
                    ingested,
                    malformed: now.1 - base.1,
                    order_violations: now.2 - base.2,
                    stalls: now.3 - base.3,
                };
                let payload = serde_json::to_vec(&reply)?;
                write_frame(&mut conn, &Frame::new(MsgType::Result, frame.seq, payload))?;
            }
            other => return Err(ControlError::Unexpected(other)),
        }
    }
}

/// Sender side of the control channel.
pub struct ControlClient {
    conn: TcpStream,
    seq: u32,
}

impl ControlClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ControlError> {
        let conn = TcpStream::connect(addr)?;
        conn.set_nodelay(true)?;
        Ok(Self { conn, seq: 0 })
    }

    fn call(&mut self, frame: Frame) -> Result<Frame, ControlError> {
        write_frame(&mut self.conn, &frame)?;
        let reply = read_frame(&mut self.conn)?;
        if reply.msg_type != frame.msg_type || reply.seq != frame.seq {
            return Err(ControlError::Unexpected(reply.msg_type));
        }
        Ok(reply)
    }

    pub fn begin_run(&mut self) -> Result<(), ControlError> {
        self.seq += 1;
        self.call(Frame::new(MsgType::Register, self.seq, Vec::new()))?;
        Ok(())
    }

    /// Reports `sent` and returns the receiver's counts for the run.
    pub fn finish_run(&mut self, sent: u64) -> Result<RunCounts, ControlError> {
        self.seq += 1;
        let payload = serde_json::to_vec(&RunCounts {
            sent,
            ..Default::default()
        })?;
        let reply = self.call(Frame::new(MsgType::Result, self.seq, payload))?;
        Ok(serde_json::from_slice(&reply.payload)?)
    }
}
