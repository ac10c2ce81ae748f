//! Handler specifications and selection predicates.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::codec::Codec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum HandlerKind {
    Id = 0,
    BufferedId = 1,
    Downsample = 2,
    XoY = 3,
    FirstLast = 4,
    Spc = 5,
    Mpc = 6,
    RetStart = 7,
    RetEnd = 8,
    Null = 9,
}

impl HandlerKind {
    pub fn from_code(b: u8) -> Option<Self> {
        use HandlerKind::*;
        [
            Id, BufferedId, Downsample, XoY, FirstLast, Spc, Mpc, RetStart, RetEnd, Null,
        ]
        .get(b as usize)
        .copied()
    }
}

/// Policy applied to each record logged on a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HandlerSpec {
    /// Every record written straight to the sink.
    Id,
    /// Every record, collected in blocks and compressed off the logging thread.
    BufferedId(Codec),
    /// Every n-th call, starting with the first.
    Downsample(u64),
    /// Tuples whose id satisfies `id mod y < x`.
    XoY { x: u64, y: u64 },
    FirstLast,
    /// Periodic count, single writer.
    Spc(Duration),
    /// Periodic count, any number of writers.
    Mpc(Duration),
    RetStart,
    RetEnd,
    Null,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("downsample factor must be at least 1")]
    DownsampleZero,
    #[error("XoY needs 0 <= x <= y and y >= 1, got x={x} y={y}")]
    XoY { x: u64, y: u64 },
    #[error("counter period must be positive")]
    Period,
    #[error("cannot parse handler {0:?}")]
    Parse(String),
}

impl HandlerSpec {
    pub fn kind(&self) -> HandlerKind {
        match self {
            HandlerSpec::Id => HandlerKind::Id,
            HandlerSpec::BufferedId(_) => HandlerKind::BufferedId,
            HandlerSpec::Downsample(_) => HandlerKind::Downsample,
            HandlerSpec::XoY { .. } => HandlerKind::XoY,
            HandlerSpec::FirstLast => HandlerKind::FirstLast,
            HandlerSpec::Spc(_) => HandlerKind::Spc,
            HandlerSpec::Mpc(_) => HandlerKind::Mpc,
            HandlerSpec::RetStart => HandlerKind::RetStart,
            HandlerSpec::RetEnd => HandlerKind::RetEnd,
            HandlerSpec::Null => HandlerKind::Null,
        }
    }

    pub fn codec(&self) -> Codec {
        match self {
            HandlerSpec::BufferedId(c) => *c,
            _ => Codec::Raw,
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        match *self {
            HandlerSpec::Downsample(0) => Err(SpecError::DownsampleZero),
            HandlerSpec::XoY { x, y } if y == 0 || x > y => Err(SpecError::XoY { x, y }),
            HandlerSpec::Spc(p) | HandlerSpec::Mpc(p) if p.is_zero() => Err(SpecError::Period),
            _ => Ok(()),
        }
    }
}

/// Line-protocol form, e.g. `XOY 2 1024` or `SPC 1000000` (period in µs).
impl fmt::Display for HandlerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HandlerSpec::Id => write!(f, "ID"),
            HandlerSpec::BufferedId(c) => write!(f, "BUFFERED_ID {c}"),
            HandlerSpec::Downsample(n) => write!(f, "DOWNSAMPLE {n}"),
            HandlerSpec::XoY { x, y } => write!(f, "XOY {x} {y}"),
            HandlerSpec::FirstLast => write!(f, "FIRST_LAST"),
            HandlerSpec::Spc(p) => write!(f, "SPC {}", p.as_micros()),
            HandlerSpec::Mpc(p) => write!(f, "MPC {}", p.as_micros()),
            HandlerSpec::RetStart => write!(f, "RET_START"),
            HandlerSpec::RetEnd => write!(f, "RET_END"),
            HandlerSpec::Null => write!(f, "NULL"),
        }
    }
}

impl FromStr for HandlerSpec {
    type Err = SpecError;
    fn from_str(s: &str) -> Result<Self, SpecError> {
        let bad = || SpecError::Parse(s.to_string());
        let words: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<u64, SpecError> {
            words.get(i).and_then(|w| w.parse().ok()).ok_or_else(bad)
        };
        let kind = words.first().ok_or_else(bad)?.to_ascii_uppercase();
        let (spec, arity) = match kind.as_str() {
            "ID" => (HandlerSpec::Id, 1),
            "BUFFERED_ID" => {
                let codec = match words.get(1) {
                    Some(w) => w.parse().map_err(|_| bad())?,
                    None => Codec::Raw,
                };
                (HandlerSpec::BufferedId(codec), words.len().max(1))
            }
            "DOWNSAMPLE" => (HandlerSpec::Downsample(num(1)?), 2),
            "XOY" => (HandlerSpec::XoY { x: num(1)?, y: num(2)? }, 3),
            "FIRST_LAST" => (HandlerSpec::FirstLast, 1),
            "SPC" => (HandlerSpec::Spc(Duration::from_micros(num(1)?)), 2),
            "MPC" => (HandlerSpec::Mpc(Duration::from_micros(num(1)?)), 2),
            "RET_START" => (HandlerSpec::RetStart, 1),
            "RET_END" => (HandlerSpec::RetEnd, 1),
            "NULL" => (HandlerSpec::Null, 1),
            _ => return Err(bad()),
        };
        if words.len() != arity || (kind == "BUFFERED_ID" && words.len() > 2) {
            return Err(bad());
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Downsample keeps call indices 0, n, 2n, …
#[inline]
pub fn downsample_selects(n: u64, call_index: u64) -> bool {
    call_index % n == 0
}

#[inline]
pub fn xoy_selects(x: u64, y: u64, tuple_id: u64) -> bool {
    tuple_id % y < x
}
