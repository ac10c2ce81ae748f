#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use cp_core::relation::{ClockRelation, Direction, NodeId};
use cp_minrtt::{master_measure, DelayModel, SessionSpec, SimCluster};
use cp_profiler::sink::{create, frame_header, SinkHeader};
use cp_profiler::{Codec, DataFormat, HandlerKind, LogRecord, RetRecord, TscPairRecord};

fn write_sink(root: &Path, node: u32, name: &str, format: DataFormat, kind: HandlerKind, raw: Vec<u8>) -> PathBuf {
    let dir = root.join(node.to_string());
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(format!("{name}.cplg"));
    let mut f = create(&path, &SinkHeader::new(Codec::Raw, format, kind, name)).unwrap();
    if !raw.is_empty() {
        let payload = Codec::Raw.compress(&raw);
        f.write_all(&frame_header(payload.len(), raw.len())).unwrap();
        f.write_all(&payload).unwrap();
    }
    path
}

pub fn write_ticks(root: &Path, node: u32, name: &str, records: &[(u64, u64)]) -> PathBuf {
    let raw = records
        .iter()
        .flat_map(|&(tuple_id, timestamp)| LogRecord { timestamp, tuple_id }.encode())
        .collect();
    write_sink(root, node, name, DataFormat::RawTicks, HandlerKind::Id, raw)
}

pub fn write_wall(root: &Path, node: u32, name: &str, records: &[(u64, u64)]) -> PathBuf {
    let raw = records
        .iter()
        .flat_map(|&(tuple_id, timestamp)| LogRecord { timestamp, tuple_id }.encode())
        .collect();
    write_sink(root, node, name, DataFormat::WallNs, HandlerKind::Id, raw)
}

pub fn write_tsc(root: &Path, node: u32, name: &str, records: &[TscPairRecord]) -> PathBuf {
    let raw = records.iter().flat_map(|r| r.encode()).collect();
    write_sink(root, node, name, DataFormat::TscPair, HandlerKind::Id, raw)
}

pub fn write_ret(root: &Path, node: u32, name: &str, records: &[RetRecord]) -> PathBuf {
    let raw = records.iter().flat_map(|r| r.encode()).collect();
    write_sink(root, node, name, DataFormat::RawTicks, HandlerKind::RetStart, raw)
}

/// A measured two-node cluster and the true-time window between its anchors.
pub struct Measured {
    pub sim: SimCluster,
    pub relations: BTreeMap<Direction, ClockRelation>,
    pub window_ns: (f64, f64),
}

pub fn measure(seed: u64, nodes: u32, delays: DelayModel) -> Measured {
    let mut sim = SimCluster::random(seed, nodes, delays);
    let spec = SessionSpec {
        iterations: 100,
        spacing: Duration::from_secs(10),
        ref_node: None,
    };
    let s = master_measure(&mut sim, &spec).unwrap();
    let a = *sim.clock(NodeId(0)).unwrap();
    let rel = &s.relations[&Direction::new(NodeId(0), NodeId(1))];
    let t_j = (rel.m1.triple.local_sample_end.wall_ns - a.wall_offset_ns) as f64;
    let t_m = (rel.m2.triple.local_sample_start.wall_ns - a.wall_offset_ns) as f64;
    Measured {
        sim,
        relations: s.relations,
        window_ns: (t_j, t_m),
    }
}
