//! Channel registry and shared pipeline for one process.

use std::collections::BTreeMap;
use std::io;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use parking_lot::Mutex;
use thiserror::Error;

use crate::channel::{BufferedConfig, Channel, ChannelInner, CloseReport, OpenParams};
use crate::config_server::{resolve_handler, ResolveError};
use crate::handler::{HandlerKind, HandlerSpec, SpecError};
use crate::pipeline::Pipeline;
use crate::record::DataFormat;
use crate::ret::{AckReceiver, AckSender};
use crate::sink::{self, SinkHeader};

pub const DEFAULT_BLOCK_CAPACITY: usize = 1 << 20;
pub const DEFAULT_POOL_BLOCKS: usize = 4;
pub const DEFAULT_WORKERS: usize = 2;

#[derive(Debug, Clone)]
pub struct ProfilerConfig {
    /// Sinks are created here as `<name>.cplg` unless a path is given.
    pub out_dir: PathBuf,
    /// Records per block for buffered channels.
    pub block_capacity: usize,
    /// Blocks a buffered channel may have in flight before logging blocks.
    pub pool_blocks: usize,
    /// Compression workers shared by all buffered channels.
    pub workers: usize,
    pub config_timeout: Duration,
    /// How long closing a return-trip start channel waits for outstanding
    /// acknowledgments.
    pub ret_grace: Duration,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("."),
            block_capacity: DEFAULT_BLOCK_CAPACITY,
            pool_blocks: DEFAULT_POOL_BLOCKS,
            workers: DEFAULT_WORKERS,
            config_timeout: Duration::from_secs(5),
            ret_grace: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Error)]
pub enum ProfilerError {
    #[error("channel {0:?} is already open")]
    DuplicateName(String),
    #[error("config server: {0}")]
    ConfigServer(#[from] ResolveError),
    #[error("sink {path}: {source}")]
    Sink {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("{0:?} channels need an acknowledgment link")]
    MissingAckLink(HandlerKind),
    #[error("channel {name}: {records} records could not be written")]
    Unpersisted { name: String, records: u64 },
}

/// Where a channel's handler comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandlerSource {
    Spec(HandlerSpec),
    /// Ask the configuration server at this address.
    ConfigServer(String),
}

impl From<HandlerSpec> for HandlerSource {
    fn from(s: HandlerSpec) -> Self {
        HandlerSource::Spec(s)
    }
}

pub struct Profiler {
    config: ProfilerConfig,
    channels: Mutex<BTreeMap<String, Arc<ChannelInner>>>,
    pipeline: OnceLock<Pipeline>,
}

impl Profiler {
    pub fn new(config: ProfilerConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            channels: Mutex::new(BTreeMap::new()),
            pipeline: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &ProfilerConfig {
        &self.config
    }

    pub fn channel(&self, name: &str) -> ChannelBuilder<'_> {
        ChannelBuilder {
            profiler: self,
            name: name.to_string(),
            format: DataFormat::WallNs,
            source: HandlerSource::Spec(HandlerSpec::Id),
            path: None,
            ack_sender: None,
            ack_receiver: None,
        }
    }

    pub fn open_channel(
        &self,
        name: &str,
        format: DataFormat,
        handler: impl Into<HandlerSource>,
    ) -> Result<Channel, ProfilerError> {
        self.channel(name).format(format).source(handler.into()).open()
    }

    /// Closes every open channel, draining buffered pipelines.
    pub fn flush_all_on_termination(&self) -> Vec<CloseReport> {
        let channels: Vec<_> = self.channels.lock().values().cloned().collect();
        channels.iter().map(|c| c.close()).collect()
    }

    /// On SIGTERM, flushes every channel, prints one line per channel to
    /// stderr and exits with status 143.
    pub fn install_termination_handler(self: &Arc<Self>) -> io::Result<()> {
        let mut signals = signal_hook::iterator::Signals::new([signal_hook::consts::SIGTERM])?;
        let me = Arc::clone(self);
        std::thread::Builder::new()
            .name("cp-sigterm".into())
            .spawn(move || {
                if signals.forever().next().is_some() {
                    for r in me.flush_all_on_termination() {
                        eprintln!(
                            "flushed {} logged={} written={} unpersisted={}",
                            r.name, r.logged, r.written, r.unpersisted
                        );
                    }
                    std::process::exit(143);
                }
            })?;
        Ok(())
    }

    fn pipeline(&self) -> &Pipeline {
        self.pipeline.get_or_init(|| Pipeline::start(self.config.workers))
    }
}

impl Drop for Profiler {
    fn drop(&mut self) {
        self.flush_all_on_termination();
    }
}

pub struct ChannelBuilder<'a> {
    profiler: &'a Profiler,
    name: String,
    format: DataFormat,
    source: HandlerSource,
    path: Option<PathBuf>,
    ack_sender: Option<Box<dyn AckSender>>,
    ack_receiver: Option<Box<dyn AckReceiver>>,
}

impl ChannelBuilder<'_> {
    pub fn format(mut self, format: DataFormat) -> Self {
        self.format = format;
        self
    }

    pub fn handler(mut self, spec: HandlerSpec) -> Self {
        self.source = HandlerSource::Spec(spec);
        self
    }

    pub fn source(mut self, source: HandlerSource) -> Self {
        self.source = source;
        self
    }

    pub fn from_config_server(mut self, addr: &str) -> Self {
        self.source = HandlerSource::ConfigServer(addr.to_string());
        self
    }

    pub fn sink_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.path = Some(path.into());
        self
    }

    /// Required for return-trip end channels.
    pub fn ack_sender(mut self, s: impl AckSender + 'static) -> Self {
        self.ack_sender = Some(Box::new(s));
        self
    }

    /// Required for return-trip start channels.
    pub fn ack_receiver(mut self, r: impl AckReceiver + 'static) -> Self {
        self.ack_receiver = Some(Box::new(r));
        self
    }

    pub fn open(self) -> Result<Channel, ProfilerError> {
        let p = self.profiler;
        let spec = match &self.source {
            HandlerSource::Spec(s) => *s,
            HandlerSource::ConfigServer(addr) => {
                resolve_handler(addr, &self.name, p.config.config_timeout)?
            }
        };
        spec.validate()?;
        match spec {
            HandlerSpec::RetStart if self.ack_receiver.is_none() => {
                return Err(ProfilerError::MissingAckLink(HandlerKind::RetStart))
            }
            HandlerSpec::RetEnd if self.ack_sender.is_none() => {
                return Err(ProfilerError::MissingAckLink(HandlerKind::RetEnd))
            }
            _ => {}
        }

        let mut channels = p.channels.lock();
        if channels.get(&self.name).is_some_and(|c| !c.is_closed()) {
            return Err(ProfilerError::DuplicateName(self.name));
        }
        let path = self
            .path
            .unwrap_or_else(|| p.config.out_dir.join(format!("{}.cplg", self.name)));
        let header = SinkHeader::new(spec.codec(), self.format, spec.kind(), &self.name);
        let file = sink::create(&path, &header).map_err(|source| ProfilerError::Sink {
            path: path.clone(),
            source,
        })?;
        let buffered = matches!(spec, HandlerSpec::BufferedId(_)).then(|| BufferedConfig {
            block_capacity: p.config.block_capacity,
            pool_blocks: p.config.pool_blocks,
            jobs: p.pipeline().sender(),
        });
        let inner = ChannelInner::open(OpenParams {
            name: self.name.clone(),
            format: self.format,
            spec,
            path,
            file,
            buffered,
            ack_sender: self.ack_sender,
            ack_receiver: self.ack_receiver,
            ret_grace: p.config.ret_grace,
        });
        channels.insert(self.name, Arc::clone(&inner));
        Ok(Channel(inner))
    }
}

impl Channel {
    /// Closes the channel and fails if any record could not be persisted.
    pub fn close_checked(&self) -> Result<CloseReport, ProfilerError> {
        let r = self.close();
        if r.unpersisted > 0 {
            return Err(ProfilerError::Unpersisted {
                name: r.name,
                records: r.unpersisted,
            });
        }
        Ok(r)
    }
}
