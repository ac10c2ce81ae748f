//! Loading sink files laid out as `<logs>/<node_id>/*.cplg`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cp_core::clock::{calibrate_frequency, ClockSample, CounterFrequency, CycleCount};
use cp_core::relation::NodeId;
use cp_profiler::record::{RetRecord, TscPairRecord};
use cp_profiler::sink::{decode_file, DecodeError};
use cp_profiler::{DataFormat, Decoded, HandlerKind, Records};
use thiserror::Error;

pub const SINK_EXTENSION: &str = "cplg";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: DecodeError,
    },
}

/// What a timestamp counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimeBase {
    Ticks,
    WallNs,
}

/// One decoded sink file.
#[derive(Debug, Clone)]
pub struct ChannelLog {
    pub node: NodeId,
    pub name: String,
    pub path: PathBuf,
    pub handler: HandlerKind,
    pub format: DataFormat,
    pub truncated: bool,
    pub records: Records,
}

impl ChannelLog {
    pub fn time_base(&self) -> TimeBase {
        match self.format {
            DataFormat::WallNs => TimeBase::WallNs,
            DataFormat::RawTicks | DataFormat::TscPair => TimeBase::Ticks,
        }
    }

    /// `(tuple_id, timestamp)` pairs in file order. The timestamp is the
    /// counter value for tsc_pair channels.
    pub fn events(&self) -> Vec<(u64, u64)> {
        match &self.records {
            Records::Log(v) => v.iter().map(|r| (r.tuple_id, r.timestamp)).collect(),
            Records::TscPair(v) => v.iter().map(|r| (r.tuple_id, r.ticks)).collect(),
            Records::Ret(_) | Records::Counts { .. } => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LogSet {
    pub channels: Vec<ChannelLog>,
    pub notices: Vec<String>,
}

impl LogSet {
    pub fn nodes(&self) -> Vec<NodeId> {
        let mut v: Vec<NodeId> = self.channels.iter().map(|c| c.node).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Return-trip records grouped by the node that wrote them.
    pub fn ret_records(&self) -> BTreeMap<NodeId, Vec<RetRecord>> {
        let mut out: BTreeMap<NodeId, Vec<RetRecord>> = BTreeMap::new();
        for c in &self.channels {
            if let Records::Ret(v) = &c.records {
                out.entry(c.node).or_default().extend_from_slice(v);
            }
        }
        for v in out.values_mut() {
            v.sort_by_key(|r| (r.t1, r.tuple_id));
        }
        out
    }

    /// Counter rate of `node` from its earliest and latest tsc_pair records.
    pub fn calibrated_frequency(&self, node: NodeId) -> Option<CounterFrequency> {
        let pairs: Vec<&TscPairRecord> = self
            .channels
            .iter()
            .filter(|c| c.node == node)
            .filter_map(|c| match &c.records {
                Records::TscPair(v) => Some(v.iter()),
                _ => None,
            })
            .flatten()
            .collect();
        let first = pairs.iter().min_by_key(|r| r.ticks)?;
        let last = pairs.iter().max_by_key(|r| r.ticks)?;
        let sample = |r: &TscPairRecord| ClockSample {
            wall_ns: r.wall_ns as i64,
            cycles: CycleCount(r.ticks),
        };
        calibrate_frequency(sample(first), sample(last)).ok()
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, LogError> {
    let mut v = Vec::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        v.push(e.map_err(io_err(dir))?.path());
    }
    v.sort();
    Ok(v)
}

/// Decodes every sink file under `dir`. Subdirectories whose names are not
/// node ids are skipped with a notice. Files are decoded in parallel; the
/// result is ordered by node, then path.
pub fn load_logs(dir: &Path) -> Result<LogSet, LogError> {
    let mut set = LogSet::default();
    let mut files: Vec<(NodeId, PathBuf)> = Vec::new();
    for sub in sorted_entries(dir)? {
        if !sub.is_dir() {
            continue;
        }
        let name = sub.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let Ok(node) = name.parse::<NodeId>() else {
            set.notices.push(format!("skipped {}: not a node id", sub.display()));
            continue;
        };
        for f in sorted_entries(&sub)? {
            if f.extension().and_then(|e| e.to_str()) == Some(SINK_EXTENSION) {
                files.push((node, f));
            }
        }
    }
    files.sort();

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(files.len().max(1));
    let decoded: Vec<Result<Decoded, DecodeError>> = std::thread::scope(|s| {
        let chunks: Vec<_> = files
            .chunks(files.len().div_ceil(workers).max(1))
            .map(|chunk| s.spawn(move || chunk.iter().map(|(_, p)| decode_file(p)).collect::<Vec<_>>()))
            .collect();
        chunks
            .into_iter()
            .flat_map(|h| h.join().expect("decode thread panicked"))
            .collect()
    });
    for ((node, path), d) in files.into_iter().zip(decoded) {
        let d = d.map_err(|source| LogError::Decode {
            path: path.clone(),
            source,
        })?;
        if d.truncated {
            set.notices
                .push(format!("{}: ends inside a frame, later records lost", path.display()));
        }
        set.channels.push(ChannelLog {
            node,
            name: d.header.name,
            path,
            handler: d.header.handler_kind,
            format: d.header.data_format,
            truncated: d.truncated,
            records: d.records,
        });
    }
    Ok(set)
}
