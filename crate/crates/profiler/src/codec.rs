//! Block codecs, selected per sink by a one-byte id in the file header.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[repr(u8)]
pub enum Codec {
    #[default]
    Raw = 0,
    Zstd = 1,
    Lzo = 2,
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unknown codec id {0}")]
    Unknown(u8),
    #[error("{codec} decompression failed: {reason}")]
    Corrupt { codec: Codec, reason: String },
    #[error("{codec}: expected {expected} bytes, got {got}")]
    Length {
        codec: Codec,
        expected: usize,
        got: usize,
    },
}

const ZSTD_LEVEL: i32 = 1;

impl Codec {
    pub const ALL: [Codec; 3] = [Codec::Raw, Codec::Zstd, Codec::Lzo];

    pub fn from_code(b: u8) -> Result<Self, CodecError> {
        match b {
            0 => Ok(Codec::Raw),
            1 => Ok(Codec::Zstd),
            2 => Ok(Codec::Lzo),
            other => Err(CodecError::Unknown(other)),
        }
    }

    /// An empty block always encodes to an empty payload.
    pub fn compress(self, raw: &[u8]) -> Vec<u8> {
        if raw.is_empty() {
            return Vec::new();
        }
        match self {
            Codec::Raw => raw.to_vec(),
            Codec::Zstd => zstd::bulk::compress(raw, ZSTD_LEVEL).expect("zstd compress"),
            Codec::Lzo => lzokay_native::compress(raw).expect("lzo compress"),
        }
    }

    pub fn decompress(self, payload: &[u8], raw_len: usize) -> Result<Vec<u8>, CodecError> {
        if payload.is_empty() && raw_len == 0 {
            return Ok(Vec::new());
        }
        let out = match self {
            Codec::Raw => payload.to_vec(),
            Codec::Zstd => zstd::bulk::decompress(payload, raw_len).map_err(|e| {
                CodecError::Corrupt {
                    codec: self,
                    reason: e.to_string(),
                }
            })?,
            Codec::Lzo => lzokay_native::decompress_all(payload, Some(raw_len)).map_err(|e| {
                CodecError::Corrupt {
                    codec: self,
                    reason: format!("{e:?}"),
                }
            })?,
        };
        if out.len() != raw_len {
            return Err(CodecError::Length {
                codec: self,
                expected: raw_len,
                got: out.len(),
            });
        }
        Ok(out)
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Codec::Raw => "raw",
            Codec::Zstd => "zstd",
            Codec::Lzo => "lzo",
        })
    }
}

impl FromStr for Codec {
    type Err = CodecError;
    fn from_str(s: &str) -> Result<Self, CodecError> {
        match s {
            "raw" | "0" => Ok(Codec::Raw),
            "zstd" | "1" => Ok(Codec::Zstd),
            "lzo" | "2" => Ok(Codec::Lzo),
            _ => Err(CodecError::Unknown(u8::MAX)),
        }
    }
}
