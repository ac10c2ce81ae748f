//! Data wire and tuple decoding.
//!
//! ```text
//! u32 LE frame_len | u32 LE tuple_count | (u32 LE len | bytes) * tuple_count
//! ```
//! A tuple is an 8-byte little-endian sequence number followed by UTF-8 text.

use std::io::{self, Read};

use thiserror::Error;

pub const DEFAULT_BUCKET: usize = 1024;
/// Longest time a partly filled bucket waits before it is sent.
pub const DEFAULT_MAX_AGE: std::time::Duration = std::time::Duration::from_millis(50);
pub const SEQ_LEN: usize = 8;
pub const MAX_FRAME_LEN: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("frame length {0} out of range")]
    BadLength(usize),
    #[error("bucket holds {count} tuples, limit {limit}")]
    TooManyTuples { count: usize, limit: usize },
    #[error("bucket truncated at tuple {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after last tuple")]
    Trailing(usize),
    #[error("tuple {index}: {reason}")]
    BadTuple { index: usize, reason: &'static str },
}

impl FrameError {
    /// True when the stream ended in the middle of a frame.
    pub fn is_partial(&self) -> bool {
        matches!(self, FrameError::Io(e) if e.kind() == io::ErrorKind::UnexpectedEof)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tuple {
    pub seq: u64,
    pub body: String,
}

/// Deserialized tuples from one frame, tagged with the receive thread that
/// decoded them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bucket {
    pub source: usize,
    pub tuples: Vec<Tuple>,
}

/// A tuple template of `size` bytes: a zero sequence slot and ASCII filler.
pub fn make_payload(size: usize) -> Vec<u8> {
    let mut p = vec![0u8; SEQ_LEN];
    p.extend((0..size.saturating_sub(SEQ_LEN)).map(|i| b'a' + (i % 26) as u8));
    p
}

/// Encodes one frame, stamping `first_seq + i` into tuple `i`.
pub fn encode_bucket(first_seq: u64, tuples: &[&[u8]]) -> Vec<u8> {
    let mut out = vec![0u8; 8];
    for (i, t) in tuples.iter().enumerate() {
        push_tuple(&mut out, first_seq + i as u64, t);
    }
    seal(&mut out, tuples.len() as u32);
    out
}

pub(crate) fn push_tuple(out: &mut Vec<u8>, seq: u64, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    let at = out.len();
    out.extend_from_slice(payload);
    out[at..at + SEQ_LEN].copy_from_slice(&seq.to_le_bytes());
}

/// Fills the length and count fields of a frame whose first 8 bytes were
/// reserved.
pub(crate) fn seal(out: &mut [u8], count: u32) {
    let len = (out.len() - 4) as u32;
    out[..4].copy_from_slice(&len.to_le_bytes());
    out[4..8].copy_from_slice(&count.to_le_bytes());
}

/// Reads the next frame body into `buf`. `Ok(false)` means the stream ended
/// cleanly between frames.
pub fn read_frame<R: Read>(r: &mut R, buf: &mut Vec<u8>) -> Result<bool, FrameError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(len) as usize;
    if !(4..=MAX_FRAME_LEN).contains(&len) {
        return Err(FrameError::BadLength(len));
    }
    buf.resize(len, 0);
    r.read_exact(buf)?;
    Ok(true)
}

/// Extra decode work per tuple: `rounds` FNV-1a passes over the bytes.
fn burn(bytes: &[u8], rounds: u32) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for _ in 0..rounds {
        for &b in bytes {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

pub fn deserialize_tuple(bytes: &[u8], cost_rounds: u32, index: usize) -> Result<Tuple, FrameError> {
    if bytes.len() < SEQ_LEN {
        return Err(FrameError::BadTuple {
            index,
            reason: "shorter than sequence number",
        });
    }
    std::hint::black_box(burn(bytes, cost_rounds));
    let seq = u64::from_le_bytes(bytes[..SEQ_LEN].try_into().unwrap());
    let body = std::str::from_utf8(&bytes[SEQ_LEN..]).map_err(|_| FrameError::BadTuple {
        index,
        reason: "body is not UTF-8",
    })?;
    Ok(Tuple {
        seq,
        body: body.to_owned(),
    })
}

/// Decodes every tuple of a frame body.
pub fn parse_bucket(body: &[u8], limit: usize, cost_rounds: u32) -> Result<Vec<Tuple>, FrameError> {
    let count_bytes: [u8; 4] = body
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or(FrameError::Truncated(0))?;
    let count = u32::from_le_bytes(count_bytes) as usize;
    if count > limit {
        return Err(FrameError::TooManyTuples { count, limit });
    }
    let mut tuples = Vec::with_capacity(count);
    let mut rest = &body[4..];
    for i in 0..count {
        let len = rest
            .get(..4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or(FrameError::Truncated(i))?;
        let bytes = rest.get(4..4 + len).ok_or(FrameError::Truncated(i))?;
        tuples.push(deserialize_tuple(bytes, cost_rounds, i)?);
        rest = &rest[4 + len..];
    }
    if !rest.is_empty() {
        return Err(FrameError::Trailing(rest.len()));
    }
    Ok(tuples)
}
