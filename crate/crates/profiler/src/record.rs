//! Fixed-size little-endian record encodings.

use std::fmt;
use std::str::FromStr;

use cp_core::clock::{monotonic_raw_ns, read_cycles, sample_clock_pair};

/// What a channel's timestamps are made of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DataFormat {
    WallNs = 0,
    RawTicks = 1,
    /// Wall clock and counter read together.
    TscPair = 2,
}

impl DataFormat {
    pub fn from_code(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::WallNs),
            1 => Some(Self::RawTicks),
            2 => Some(Self::TscPair),
            _ => None,
        }
    }

    /// Captures a timestamp in this format.
    #[inline]
    pub fn now(self) -> Stamp {
        match self {
            DataFormat::WallNs => Stamp {
                primary: monotonic_raw_ns() as u64,
                ticks: 0,
            },
            DataFormat::RawTicks => Stamp {
                primary: read_cycles().0,
                ticks: 0,
            },
            DataFormat::TscPair => {
                let s = sample_clock_pair();
                Stamp {
                    primary: s.wall_ns as u64,
                    ticks: s.cycles.0,
                }
            }
        }
    }
}

impl fmt::Display for DataFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataFormat::WallNs => "wall_ns",
            DataFormat::RawTicks => "raw_ticks",
            DataFormat::TscPair => "tsc_pair",
        })
    }
}

impl FromStr for DataFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "wall_ns" => Ok(Self::WallNs),
            "raw_ticks" => Ok(Self::RawTicks),
            "tsc_pair" => Ok(Self::TscPair),
            other => Err(format!("unknown data format {other:?}")),
        }
    }
}

/// A captured timestamp. `ticks` is only meaningful for [`DataFormat::TscPair`],
/// where `primary` holds the wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stamp {
    pub primary: u64,
    pub ticks: u64,
}

impl Stamp {
    /// The value used for ordering and round-trip arithmetic: the counter
    /// for tsc_pair, otherwise the single timestamp.
    pub fn order_key(self, format: DataFormat) -> u64 {
        match format {
            DataFormat::TscPair => self.ticks,
            _ => self.primary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogRecord {
    pub timestamp: u64,
    pub tuple_id: u64,
}

impl LogRecord {
    pub const SIZE: usize = 16;

    pub fn encode(&self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[..8].copy_from_slice(&self.timestamp.to_le_bytes());
        b[8..].copy_from_slice(&self.tuple_id.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Self {
        Self {
            timestamp: u64::from_le_bytes(b[..8].try_into().unwrap()),
            tuple_id: u64::from_le_bytes(b[8..16].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TscPairRecord {
    pub wall_ns: u64,
    pub ticks: u64,
    pub tuple_id: u64,
}

impl TscPairRecord {
    pub const SIZE: usize = 24;

    pub fn encode(&self) -> [u8; 24] {
        encode3(self.wall_ns, self.ticks, self.tuple_id)
    }

    pub fn decode(b: &[u8]) -> Self {
        let (wall_ns, ticks, tuple_id) = decode3(b);
        Self {
            wall_ns,
            ticks,
            tuple_id,
        }
    }
}

/// Return-trip triple: send time at the start node and acknowledgment
/// arrival time, both on the start node's clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RetRecord {
    pub tuple_id: u64,
    pub t1: u64,
    pub t3: u64,
}

impl RetRecord {
    pub const SIZE: usize = 24;

    pub fn rtt(&self) -> u64 {
        self.t3.saturating_sub(self.t1)
    }

    pub fn encode(&self) -> [u8; 24] {
        encode3(self.tuple_id, self.t1, self.t3)
    }

    pub fn decode(b: &[u8]) -> Self {
        let (tuple_id, t1, t3) = decode3(b);
        Self { tuple_id, t1, t3 }
    }
}

/// Per-period count. The grand total is stored with `period_index ==
/// TOTAL_INDEX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CountRecord {
    pub period_index: u64,
    pub count: u64,
}

impl CountRecord {
    pub const SIZE: usize = 16;
    pub const TOTAL_INDEX: u64 = u64::MAX;

    pub fn encode(&self) -> [u8; 16] {
        LogRecord {
            timestamp: self.period_index,
            tuple_id: self.count,
        }
        .encode()
    }

    pub fn decode(b: &[u8]) -> Self {
        let r = LogRecord::decode(b);
        Self {
            period_index: r.timestamp,
            count: r.tuple_id,
        }
    }
}

fn encode3(a: u64, b: u64, c: u64) -> [u8; 24] {
    let mut out = [0u8; 24];
    out[..8].copy_from_slice(&a.to_le_bytes());
    out[8..16].copy_from_slice(&b.to_le_bytes());
    out[16..].copy_from_slice(&c.to_le_bytes());
    out
}

fn decode3(b: &[u8]) -> (u64, u64, u64) {
    let w = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
    (w(0), w(8), w(16))
}

/// A timestamped record in whichever layout the channel's format uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Record {
    Log(LogRecord),
    TscPair(TscPairRecord),
}

impl Record {
    pub fn new(format: DataFormat, stamp: Stamp, tuple_id: u64) -> Self {
        match format {
            DataFormat::TscPair => Record::TscPair(TscPairRecord {
                wall_ns: stamp.primary,
                ticks: stamp.ticks,
                tuple_id,
            }),
            _ => Record::Log(LogRecord {
                timestamp: stamp.primary,
                tuple_id,
            }),
        }
    }

    pub fn tuple_id(&self) -> u64 {
        match self {
            Record::Log(r) => r.tuple_id,
            Record::TscPair(r) => r.tuple_id,
        }
    }

    /// Counter value for tsc_pair records, otherwise the timestamp.
    pub fn order_key(&self) -> u64 {
        match self {
            Record::Log(r) => r.timestamp,
            Record::TscPair(r) => r.ticks,
        }
    }

    /// Appends the encoded bytes to `buf`.
    #[inline]
    pub fn append_to(&self, buf: &mut Vec<u8>) {
        match self {
            Record::Log(r) => buf.extend_from_slice(&r.encode()),
            Record::TscPair(r) => buf.extend_from_slice(&r.encode()),
        }
    }
}

pub fn record_size(format: DataFormat) -> usize {
    match format {
        DataFormat::TscPair => TscPairRecord::SIZE,
        _ => LogRecord::SIZE,
    }
}
