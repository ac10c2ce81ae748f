//! Event logging through named channels. Each channel applies a handler
//! policy (trace, sample, count, discard, return-trip) to the
//! `(timestamp, tuple id)` records logged on it and writes a framed sink
//! file.

pub mod channel;
pub mod codec;
pub mod config_server;
pub mod handler;
mod pipeline;
pub mod profiler;
pub mod record;
pub mod ret;
pub mod sink;

pub use channel::{Channel, CloseReport, LogError, NoData};
pub use codec::Codec;
pub use config_server::{parse_mapping, resolve_handler, ConfigServer};
pub use handler::{downsample_selects, xoy_selects, HandlerKind, HandlerSpec};
pub use profiler::{ChannelBuilder, HandlerSource, Profiler, ProfilerConfig, ProfilerError};
pub use record::{CountRecord, DataFormat, LogRecord, Record, RetRecord, TscPairRecord};
pub use sink::{decode_file, Decoded, Records, SinkHeader};
