//! Joining records by tuple id and turning pairs of records into durations.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use cp_core::clock::{CounterFrequency, CycleCount};
use cp_core::relation::{
    duration_with_error, local_duration, ClockRelation, Direction, MeasuredDuration, NodeId,
    RelationError,
};
use cp_core::relation_file::node_frequency;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logs::{LogSet, TimeBase};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub channel: String,
    pub node: NodeId,
    pub base: TimeBase,
    pub timestamp: u64,
}

/// Every record of one tuple, ordered by node and then timestamp, so that
/// within one node timestamps never decrease.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TupleTrace {
    pub tuple_id: u64,
    pub events: Vec<TraceEvent>,
}

impl TupleTrace {
    /// First record logged on `channel`.
    pub fn event(&self, channel: &str) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.channel == channel)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.events.iter().map(|e| e.node)
    }
}

/// Groups every timestamped record by tuple id.
pub fn merge_logs(logs: &LogSet) -> BTreeMap<u64, TupleTrace> {
    let mut by_id: HashMap<u64, Vec<TraceEvent>> = HashMap::new();
    for c in &logs.channels {
        let base = c.time_base();
        for (id, ts) in c.events() {
            by_id.entry(id).or_default().push(TraceEvent {
                channel: c.name.clone(),
                node: c.node,
                base,
                timestamp: ts,
            });
        }
    }
    by_id
        .into_iter()
        .map(|(tuple_id, mut events)| {
            events.sort_by(|a, b| {
                (a.node, a.timestamp, &a.channel).cmp(&(b.node, b.timestamp, &b.channel))
            });
            (tuple_id, TupleTrace { tuple_id, events })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    Local,
    Remote,
}

impl fmt::Display for Locality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Locality::Local => "local",
            Locality::Remote => "remote",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceDuration {
    pub duration: MeasuredDuration,
    pub locality: Locality,
    pub from_node: NodeId,
    pub to_node: NodeId,
    /// Local trace whose records include other nodes.
    pub multi_node: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("no record on channel {0}")]
    MissingChannel(String),
    #[error("no relation between nodes {0} and {1}")]
    MissingRelation(NodeId, NodeId),
    #[error("no counter frequency for node {0}")]
    NoFrequency(NodeId),
    #[error("end precedes start on node {node} by {ticks} ticks")]
    Reversed { node: NodeId, ticks: u64 },
    #[error("wall-clock records on nodes {0} and {1} cannot be related")]
    WallClockAcrossNodes(NodeId, NodeId),
    #[error("mixed wall-clock and counter records on node {0}")]
    MixedTimeBase(NodeId),
    #[error(transparent)]
    Relation(#[from] RelationError),
}

impl TraceError {
    pub fn kind(&self) -> &'static str {
        match self {
            TraceError::MissingChannel(_) => "missing_channel",
            TraceError::MissingRelation(..) => "missing_relation",
            TraceError::NoFrequency(_) => "no_frequency",
            TraceError::Reversed { .. } => "reversed",
            TraceError::WallClockAcrossNodes(..) => "wall_clock_across_nodes",
            TraceError::MixedTimeBase(_) => "mixed_time_base",
            TraceError::Relation(_) => "relation",
        }
    }
}

/// Relations and per-node counter rates used to convert records.
#[derive(Debug, Clone, Default)]
pub struct Timebase {
    pub relations: BTreeMap<Direction, ClockRelation>,
    pub frequencies: BTreeMap<NodeId, CounterFrequency>,
}

impl Timebase {
    /// Frequencies come from the relations first, then from tsc_pair records
    /// in the logs, then from `default`.
    pub fn new(
        relations: BTreeMap<Direction, ClockRelation>,
        logs: &LogSet,
        default: Option<CounterFrequency>,
    ) -> Self {
        let mut frequencies = BTreeMap::new();
        for node in logs.nodes() {
            let f = node_frequency(&relations, node)
                .or_else(|| logs.calibrated_frequency(node))
                .or(default);
            if let Some(f) = f {
                frequencies.insert(node, f);
            }
        }
        Self {
            relations,
            frequencies,
        }
    }

    pub fn frequency(&self, node: NodeId) -> Option<CounterFrequency> {
        self.frequencies.get(&node).copied()
    }
}

/// Duration from the first `from` record of the trace to its first `to`
/// record. Records on one node give an exact local duration; records on two
/// nodes use the relation probed from the `from` node, or the negated result
/// of the reverse relation when only that one exists.
pub fn trace_duration(
    trace: &TupleTrace,
    from: &str,
    to: &str,
    tb: &Timebase,
) -> Result<TraceDuration, TraceError> {
    let a = trace
        .event(from)
        .ok_or_else(|| TraceError::MissingChannel(from.to_string()))?;
    let b = trace
        .event(to)
        .ok_or_else(|| TraceError::MissingChannel(to.to_string()))?;
    if a.node == b.node {
        let duration = match (a.base, b.base) {
            (TimeBase::Ticks, TimeBase::Ticks) => {
                let f = tb.frequency(a.node).ok_or(TraceError::NoFrequency(a.node))?;
                local_duration(CycleCount(a.timestamp), CycleCount(b.timestamp), f).map_err(
                    |_| TraceError::Reversed {
                        node: a.node,
                        ticks: a.timestamp - b.timestamp,
                    },
                )?
            }
            (TimeBase::WallNs, TimeBase::WallNs) => {
                if b.timestamp < a.timestamp {
                    return Err(TraceError::Reversed {
                        node: a.node,
                        ticks: a.timestamp - b.timestamp,
                    });
                }
                let ns = (b.timestamp - a.timestamp) as f64;
                MeasuredDuration {
                    best_ticks: ns,
                    uncertainty_ticks: 0.0,
                    best_ns: ns,
                    uncertainty_ns: 0.0,
                }
            }
            _ => return Err(TraceError::MixedTimeBase(a.node)),
        };
        return Ok(TraceDuration {
            duration,
            locality: Locality::Local,
            from_node: a.node,
            to_node: b.node,
            multi_node: trace.nodes().any(|n| n != a.node),
        });
    }
    if a.base != TimeBase::Ticks || b.base != TimeBase::Ticks {
        return Err(TraceError::WallClockAcrossNodes(a.node, b.node));
    }
    let fwd = Direction::new(a.node, b.node);
    let duration = if let Some(rel) = tb.relations.get(&fwd) {
        duration_with_error(CycleCount(a.timestamp), CycleCount(b.timestamp), rel)?
    } else if let Some(rel) = tb.relations.get(&fwd.reversed()) {
        duration_with_error(CycleCount(b.timestamp), CycleCount(a.timestamp), rel)?.negated()
    } else {
        return Err(TraceError::MissingRelation(a.node, b.node));
    };
    Ok(TraceDuration {
        duration,
        locality: Locality::Remote,
        from_node: a.node,
        to_node: b.node,
        multi_node: false,
    })
}
