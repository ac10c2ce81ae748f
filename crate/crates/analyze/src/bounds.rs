//! Side-by-side error bounds: the relation-based bound, the return-trip
//! bound (largest round trip so far) and the NTP bound `|Θ| + E + Δ/2`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cp_core::clock::CounterFrequency;
use cp_core::relation::{ntp_error_bound, ClockRelation, Direction, NodeId, NtpStatus};
use cp_profiler::record::RetRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NtpCsvError {
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// One chronyc-style status row, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtpRow {
    pub epoch_s: f64,
    pub theta_s: f64,
    pub root_dispersion_s: f64,
    pub root_delay_s: f64,
}

impl NtpRow {
    pub fn status(&self) -> NtpStatus {
        NtpStatus::new(self.theta_s, self.root_dispersion_s, self.root_delay_s)
    }

    pub fn bound_s(&self) -> f64 {
        ntp_error_bound(&self.status())
    }

    /// The interval `Θ ± (E + Δ/2)` does not contain zero.
    pub fn excludes_zero(&self) -> bool {
        self.status().offset_exceeds_bound()
    }
}

/// NTP rows of one node, or of an unnamed host when `node` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct NtpSeries {
    pub node: Option<NodeId>,
    pub rows: Vec<NtpRow>,
}

/// Reads a CSV with columns `epoch_s, theta_s, root_dispersion_s,
/// root_delay_s`.
pub fn read_ntp_csv(path: &Path) -> Result<Vec<NtpRow>, NtpCsvError> {
    let err = |source| NtpCsvError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(err)?;
    r.deserialize().collect::<Result<Vec<NtpRow>, _>>().map_err(err)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Columns {
    pub cp: bool,
    pub ret: bool,
    pub ntp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeBounds {
    /// Node id, or `*` for an NTP series not tied to a node.
    pub node: String,
    pub cp_bound_ns: Option<f64>,
    pub ret_max_ns: Option<f64>,
    pub ret_mean_ns: Option<f64>,
    pub ret_samples: usize,
    pub ntp_max_ns: Option<f64>,
    pub ntp_rows: usize,
    pub ntp_rows_excluding_zero: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub node: String,
    pub second: u64,
    pub cp_ns: Option<f64>,
    pub ret_ns: Option<f64>,
    pub ntp_ns: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub columns: Columns,
    pub nodes: Vec<NodeBounds>,
    pub rows: Vec<BoundRow>,
    pub notices: Vec<String>,
}

pub struct BoundsInput<'a> {
    pub relations: &'a BTreeMap<Direction, ClockRelation>,
    pub frequencies: &'a BTreeMap<NodeId, CounterFrequency>,
    pub ret: &'a BTreeMap<NodeId, Vec<RetRecord>>,
    pub ntp: &'a [NtpSeries],
}

/// Anchor uncertainty of the relation that places `node` on the reference
/// timeline: one probed from the reference node to `node` if present, else
/// the tightest relation answered by `node`, else the tightest probed from it.
pub fn cp_bound_ns(relations: &BTreeMap<Direction, ClockRelation>, node: NodeId) -> Option<f64> {
    let tightest = |it: &mut dyn Iterator<Item = &ClockRelation>| {
        it.map(|r| r.anchor_uncertainty_ns()).min_by(f64::total_cmp)
    };
    relations
        .values()
        .find(|r| r.direction.responder == node && r.direction.probe == r.ref_node)
        .map(|r| r.anchor_uncertainty_ns())
        .or_else(|| tightest(&mut relations.values().filter(|r| r.direction.responder == node)))
        .or_else(|| tightest(&mut relations.values().filter(|r| r.direction.probe == node)))
}

#[derive(Default)]
struct Lane {
    cp: Option<f64>,
    ret: BTreeMap<u64, f64>,
    ntp: BTreeMap<u64, f64>,
}

/// Per node and per second: the constant relation bound, the running
/// maximum round trip and the NTP bound of that second's status row.
pub fn compare_error_bounds(input: &BoundsInput<'_>) -> ErrorBoundReport {
    let mut report = ErrorBoundReport::default();
    let mut lanes: BTreeMap<String, Lane> = BTreeMap::new();
    let mut summaries: BTreeMap<String, NodeBounds> = BTreeMap::new();
    let blank = |node: &str| NodeBounds {
        node: node.to_string(),
        cp_bound_ns: None,
        ret_max_ns: None,
        ret_mean_ns: None,
        ret_samples: 0,
        ntp_max_ns: None,
        ntp_rows: 0,
        ntp_rows_excluding_zero: 0,
    };

    let mut rel_nodes: Vec<NodeId> = input
        .relations
        .keys()
        .flat_map(|d| [d.probe, d.responder])
        .collect();
    rel_nodes.sort();
    rel_nodes.dedup();
    for node in rel_nodes {
        if let Some(cp) = cp_bound_ns(input.relations, node) {
            let key = node.to_string();
            lanes.entry(key.clone()).or_default().cp = Some(cp);
            summaries.entry(key.clone()).or_insert_with(|| blank(&key)).cp_bound_ns = Some(cp);
        }
    }

    for (&node, records) in input.ret {
        if records.is_empty() {
            continue;
        }
        let Some(freq) = input.frequencies.get(&node) else {
            report
                .notices
                .push(format!("node {node}: return-trip records without a counter frequency, skipped"));
            continue;
        };
        let key = node.to_string();
        let lane = lanes.entry(key.clone()).or_default();
        let t0 = records[0].t1;
        let mut running = 0.0f64;
        let mut sum = 0.0;
        for r in records {
            let rtt = freq.ticks_to_ns(r.rtt() as f64);
            sum += rtt;
            running = running.max(rtt);
            let second = (freq.ticks_to_ns(r.t1.saturating_sub(t0) as f64) / 1e9) as u64;
            lane.ret.insert(second, running);
        }
        let s = summaries.entry(key.clone()).or_insert_with(|| blank(&key));
        s.ret_max_ns = Some(running);
        s.ret_mean_ns = Some(sum / records.len() as f64);
        s.ret_samples = records.len();
    }

    for series in input.ntp {
        if series.rows.is_empty() {
            continue;
        }
        let key = series.node.map_or_else(|| "*".to_string(), |n| n.to_string());
        let lane = lanes.entry(key.clone()).or_default();
        let e0 = series.rows[0].epoch_s;
        let mut max = f64::NEG_INFINITY;
        let mut excl = 0;
        for row in &series.rows {
            let ns = row.bound_s() * 1e9;
            max = max.max(ns);
            excl += usize::from(row.excludes_zero());
            let second = (row.epoch_s - e0).max(0.0).floor() as u64;
            let slot = lane.ntp.entry(second).or_insert(ns);
            *slot = slot.max(ns);
        }
        let s = summaries.entry(key.clone()).or_insert_with(|| blank(&key));
        s.ntp_max_ns = Some(s.ntp_max_ns.map_or(max, |m| m.max(max)));
        s.ntp_rows += series.rows.len();
        s.ntp_rows_excluding_zero += excl;
    }

    report.columns = Columns {
        cp: lanes.values().any(|l| l.cp.is_some()),
        ret: lanes.values().any(|l| !l.ret.is_empty()),
        ntp: lanes.values().any(|l| !l.ntp.is_empty()),
    };
    for (present, what) in [
        (report.columns.cp, "relation bound: no relation files"),
        (report.columns.ret, "return-trip bound: no return-trip records"),
        (report.columns.ntp, "NTP bound: no NTP status rows"),
    ] {
        if !present {
            report.notices.push(format!("{what}, column omitted"));
        }
    }

    for (node, lane) in &lanes {
        let last = lane
            .ret
            .keys()
            .chain(lane.ntp.keys())
            .max()
            .copied()
            .unwrap_or(0);
        let mut ret_so_far = None;
        for second in 0..=last {
            if let Some(&v) = lane.ret.get(&second) {
                ret_so_far = Some(v);
            }
            report.rows.push(BoundRow {
                node: node.clone(),
                second,
                cp_ns: lane.cp,
                ret_ns: ret_so_far,
                ntp_ns: lane.ntp.get(&second).copied(),
            });
        }
    }
    report.nodes = summaries.into_values().collect();
    report
}
