//! Sink files.
//!
//! ```text
//! "CPLG" | u8 version | u8 codec | u8 data_format | u8 handler_kind | u32 name_len | name
//! then frames: u32 LE compressed_len | u32 LE raw_len | payload
//! ```
//! The header's `name_len` is little-endian like the frame fields.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{Codec, CodecError};
use crate::handler::HandlerKind;
use crate::record::{
    record_size, CountRecord, DataFormat, LogRecord, RetRecord, TscPairRecord,
};

pub const MAGIC: &[u8; 4] = b"CPLG";
pub const VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkHeader {
    pub version: u8,
    pub codec: Codec,
    pub data_format: DataFormat,
    pub handler_kind: HandlerKind,
    pub name: String,
}

impl SinkHeader {
    pub fn new(codec: Codec, data_format: DataFormat, handler_kind: HandlerKind, name: &str) -> Self {
        Self {
            version: VERSION,
            codec,
            data_format,
            handler_kind,
            name: name.to_string(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(12 + self.name.len());
        b.extend_from_slice(MAGIC);
        b.push(self.version);
        b.push(self.codec as u8);
        b.push(self.data_format as u8);
        b.push(self.handler_kind as u8);
        b.extend_from_slice(&(self.name.len() as u32).to_le_bytes());
        b.extend_from_slice(self.name.as_bytes());
        b
    }

    /// Size in bytes of one record in this sink's frames.
    pub fn record_size(&self) -> usize {
        match self.handler_kind {
            HandlerKind::RetStart => RetRecord::SIZE,
            HandlerKind::Spc | HandlerKind::Mpc => CountRecord::SIZE,
            _ => record_size(self.data_format),
        }
    }
}

pub fn frame_header(compressed_len: usize, raw_len: usize) -> [u8; FRAME_HEADER_LEN] {
    let mut h = [0u8; FRAME_HEADER_LEN];
    h[..4].copy_from_slice(&(compressed_len as u32).to_le_bytes());
    h[4..].copy_from_slice(&(raw_len as u32).to_le_bytes());
    h
}

/// Creates the sink file and writes its header.
pub fn create(path: &Path, header: &SinkHeader) -> io::Result<File> {
    let mut f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(path)?;
    f.write_all(&header.encode())?;
    Ok(f)
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("not a sink file (bad magic)")]
    Magic,
    #[error("unsupported sink version {0}")]
    Version(u8),
    #[error("bad header: {0}")]
    Header(String),
    #[error("frame {index}: {source}")]
    Codec {
        index: usize,
        #[source]
        source: CodecError,
    },
    #[error("frame {index}: raw length {raw_len} is not a multiple of {record_size}")]
    RecordSize {
        index: usize,
        raw_len: usize,
        record_size: usize,
    },
}

/// Decoded contents, by record layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Records {
    Log(Vec<LogRecord>),
    TscPair(Vec<TscPairRecord>),
    Ret(Vec<RetRecord>),
    Counts {
        periods: Vec<CountRecord>,
        total: Option<u64>,
    },
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Log(v) => v.len(),
            Records::TscPair(v) => v.len(),
            Records::Ret(v) => v.len(),
            Records::Counts { periods, .. } => periods.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tuple ids in file order, for layouts that carry them.
    pub fn tuple_ids(&self) -> Vec<u64> {
        match self {
            Records::Log(v) => v.iter().map(|r| r.tuple_id).collect(),
            Records::TscPair(v) => v.iter().map(|r| r.tuple_id).collect(),
            Records::Ret(v) => v.iter().map(|r| r.tuple_id).collect(),
            Records::Counts { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub header: SinkHeader,
    pub frames: usize,
    pub records: Records,
    /// The file ends inside a frame; everything before it was decoded.
    pub truncated: bool,
}

pub fn read_header(mut r: impl Read) -> Result<(SinkHeader, usize), DecodeError> {
    let io = |source| DecodeError::Io {
        path: PathBuf::new(),
        source,
    };
    let mut fixed = [0u8; 12];
    r.read_exact(&mut fixed).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            DecodeError::Magic
        } else {
            io(e)
        }
    })?;
    if &fixed[..4] != MAGIC {
        return Err(DecodeError::Magic);
    }
    if fixed[4] != VERSION {
        return Err(DecodeError::Version(fixed[4]));
    }
    let codec = Codec::from_code(fixed[5]).map_err(|e| DecodeError::Header(e.to_string()))?;
    let data_format = DataFormat::from_code(fixed[6])
        .ok_or_else(|| DecodeError::Header(format!("data format {}", fixed[6])))?;
    let handler_kind = HandlerKind::from_code(fixed[7])
        .ok_or_else(|| DecodeError::Header(format!("handler kind {}", fixed[7])))?;
    let name_len = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as usize;
    if name_len > 1 << 16 {
        return Err(DecodeError::Header(format!("name length {name_len}")));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name).map_err(|_| DecodeError::Header("truncated name".into()))?;
    let name = String::from_utf8(name).map_err(|_| DecodeError::Header("name is not UTF-8".into()))?;
    Ok((
        SinkHeader {
            version: fixed[4],
            codec,
            data_format,
            handler_kind,
            name,
        },
        12 + name_len,
    ))
}

pub fn decode_bytes(bytes: &[u8]) -> Result<Decoded, DecodeError> {
    let (header, mut pos) = read_header(bytes)?;
    let size = header.record_size();
    let mut raw_all = Vec::new();
    let mut frames = 0;
    let mut truncated = false;
    while pos < bytes.len() {
        if bytes.len() - pos < FRAME_HEADER_LEN {
            truncated = true;
            break;
        }
        let clen = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let rlen = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let start = pos + FRAME_HEADER_LEN;
        if bytes.len() - start < clen {
            truncated = true;
            break;
        }
        if rlen % size != 0 {
            return Err(DecodeError::RecordSize {
                index: frames,
                raw_len: rlen,
                record_size: size,
            });
        }
        let raw = header
            .codec
            .decompress(&bytes[start..start + clen], rlen)
            .map_err(|source| DecodeError::Codec {
                index: frames,
                source,
            })?;
        raw_all.extend_from_slice(&raw);
        pos = start + clen;
        frames += 1;
    }
    let chunks = raw_all.chunks_exact(size);
    let records = match header.handler_kind {
        HandlerKind::RetStart => Records::Ret(chunks.map(RetRecord::decode).collect()),
        HandlerKind::Spc | HandlerKind::Mpc => {
            let mut periods = Vec::new();
            let mut total = None;
            for r in chunks.map(CountRecord::decode) {
                if r.period_index == CountRecord::TOTAL_INDEX {
                    total = Some(r.count);
                } else {
                    periods.push(r);
                }
            }
            Records::Counts { periods, total }
        }
        _ if header.data_format == DataFormat::TscPair => {
            Records::TscPair(chunks.map(TscPairRecord::decode).collect())
        }
        _ => Records::Log(chunks.map(LogRecord::decode).collect()),
    };
    Ok(Decoded {
        header,
        frames,
        records,
        truncated,
    })
}

pub fn decode_file(path: &Path) -> Result<Decoded, DecodeError> {
    let bytes = std::fs::read(path).map_err(|source| DecodeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_bytes(&bytes)
}
