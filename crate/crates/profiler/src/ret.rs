//! Acknowledgment links for return-trip channels. The end node sends one
//! RETACK per tuple; the start node timestamps its arrival.

use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use cp_core::wire::{Frame, MsgType, WireError, HEADER_LEN};

pub trait AckSender: Send {
    fn send_ack(&mut self, tuple_id: u64) -> io::Result<()>;
}

pub trait AckReceiver: Send {
    /// Next acknowledged tuple id, or `None` if nothing arrived in `timeout`.
    fn recv_ack(&mut self, timeout: Duration) -> io::Result<Option<u64>>;
}

pub struct TcpAckSender {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl TcpAckSender {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            buf: Vec::with_capacity(32),
        })
    }
}

impl AckSender for TcpAckSender {
    fn send_ack(&mut self, tuple_id: u64) -> io::Result<()> {
        self.buf.clear();
        Frame::with_u64(MsgType::RetAck, 0, tuple_id).encode_into(&mut self.buf);
        self.stream.write_all(&self.buf)
    }
}

/// Reads RETACK frames, tolerating timeouts in the middle of a frame.
pub struct TcpAckReceiver {
    stream: TcpStream,
    pending: Vec<u8>,
}

const ACK_FRAME_LEN: usize = 4 + HEADER_LEN + 8;

impl TcpAckReceiver {
    pub fn new(stream: TcpStream) -> Self {
        Self {
            stream,
            pending: Vec::with_capacity(4096),
        }
    }

    fn take_frame(&mut self) -> io::Result<Option<u64>> {
        if self.pending.len() < ACK_FRAME_LEN {
            return Ok(None);
        }
        let frame = Frame::decode(&self.pending[..ACK_FRAME_LEN]).map_err(|e| match e {
            WireError::Io(e) => e,
            other => io::Error::new(io::ErrorKind::InvalidData, other),
        })?;
        self.pending.drain(..ACK_FRAME_LEN);
        if frame.msg_type != MsgType::RetAck {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("expected RETACK, got {:?}", frame.msg_type),
            ));
        }
        frame
            .payload_u64()
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

impl AckReceiver for TcpAckReceiver {
    fn recv_ack(&mut self, timeout: Duration) -> io::Result<Option<u64>> {
        if let Some(id) = self.take_frame()? {
            return Ok(Some(id));
        }
        self.stream.set_read_timeout(Some(timeout.max(Duration::from_micros(1))))?;
        let mut chunk = [0u8; 4096];
        match self.stream.read(&mut chunk) {
            Ok(0) => Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => {
                self.pending.extend_from_slice(&chunk[..n]);
                self.take_frame()
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

/// In-process link that delivers each acknowledgment after a fixed delay.
pub fn delayed_ack_link(delay: Duration) -> (DelayedAckSender, DelayedAckReceiver) {
    let (tx, rx) = unbounded();
    (
        DelayedAckSender { tx, delay },
        DelayedAckReceiver { rx },
    )
}

pub struct DelayedAckSender {
    tx: Sender<(Instant, u64)>,
    delay: Duration,
}

impl AckSender for DelayedAckSender {
    fn send_ack(&mut self, tuple_id: u64) -> io::Result<()> {
        self.tx
            .send((Instant::now() + self.delay, tuple_id))
            .map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))
    }
}

pub struct DelayedAckReceiver {
    rx: Receiver<(Instant, u64)>,
}

impl AckReceiver for DelayedAckReceiver {
    fn recv_ack(&mut self, timeout: Duration) -> io::Result<Option<u64>> {
        match self.rx.recv_timeout(timeout) {
            Ok((due, id)) => {
                spin_until(due);
                Ok(Some(id))
            }
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(io::ErrorKind::UnexpectedEof.into()),
        }
    }
}

/// Sleeps most of the way, then spins for the last stretch.
pub fn spin_until(due: Instant) {
    const SPIN: Duration = Duration::from_micros(100);
    loop {
        let now = Instant::now();
        if now >= due {
            return;
        }
        let left = due - now;
        if left > SPIN * 2 {
            std::thread::sleep(left - SPIN);
        } else {
            std::hint::spin_loop();
        }
    }
}
