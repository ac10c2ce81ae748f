//! Measurement sessions: two MinRTT rounds over every ordered node pair.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use cp_core::clock::{calibrate_frequency, CounterFrequency};
use cp_core::relation::{ClockRelation, Direction, MinRttMeasurement, NodeId};
use cp_core::relation_file::{self, RelationFileError};
use serde::Serialize;
use thiserror::Error;

use crate::probe::MeasureError;

/// Anything that can run a MinRTT measurement from one node to another.
pub trait PairProber {
    fn node_ids(&self) -> Vec<NodeId>;
    fn minrtt(
        &mut self,
        direction: Direction,
        iterations: u32,
    ) -> Result<MinRttMeasurement, MeasureError>;
    /// Lets `spacing` elapse between the two rounds.
    fn wait(&mut self, spacing: Duration);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionSpec {
    pub iterations: u32,
    pub spacing: Duration,
    /// Defaults to the lowest registered id.
    pub ref_node: Option<NodeId>,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            iterations: 100,
            spacing: Duration::from_secs(10),
            ref_node: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("reference node {0} is not registered")]
    UnknownReference(NodeId),
    #[error("no registered nodes")]
    Empty,
    #[error("cannot calibrate reference node {node}: {reason}")]
    ReferenceUnavailable { node: NodeId, reason: String },
    #[error(transparent)]
    File(#[from] RelationFileError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Outcome of a session. Pairs that failed appear in `errors` instead of
/// `relations`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementSession {
    pub node_ids: Vec<NodeId>,
    pub iterations: u32,
    pub ref_node: NodeId,
    pub ref_freq: CounterFrequency,
    #[serde(skip)]
    pub relations: BTreeMap<Direction, ClockRelation>,
    pub errors: BTreeMap<String, String>,
}

impl MeasurementSession {
    /// Every ordered pair has a relation.
    pub fn is_complete(&self) -> bool {
        let n = self.node_ids.len();
        self.relations.len() == n * n.saturating_sub(1)
    }

    /// Writes one `rel_<src>_<dst>.json` per relation and, when some pairs
    /// failed, `session_errors.json`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, SessionError> {
        fs::create_dir_all(dir).map_err(|source| SessionError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut paths = Vec::with_capacity(self.relations.len());
        for rel in self.relations.values() {
            paths.push(relation_file::write_relation(dir, rel)?);
        }
        if !self.errors.is_empty() {
            let path = dir.join("session_errors.json");
            let text = serde_json::to_string_pretty(&self.errors).expect("errors serialize");
            fs::write(&path, text + "\n").map_err(|source| SessionError::Io { path, source })?;
        }
        Ok(paths)
    }
}

fn pair_key(d: Direction) -> String {
    format!("{}->{}", d.probe, d.responder)
}

/// Runs the first round over every ordered pair, waits `spacing`, runs the
/// second round, then builds the relations. The reference frequency comes
/// from the reference node's own wall clock across the session; every other
/// node's rate is derived from it through the reference node's relation to
/// that node.
pub fn master_measure<P: PairProber + ?Sized>(
    prober: &mut P,
    spec: &SessionSpec,
) -> Result<MeasurementSession, SessionError> {
    if spec.iterations == 0 {
        return Err(SessionError::NoIterations);
    }
    let mut node_ids = prober.node_ids();
    node_ids.sort();
    node_ids.dedup();
    let ref_node = match spec.ref_node {
        Some(r) if !node_ids.contains(&r) => return Err(SessionError::UnknownReference(r)),
        Some(r) => r,
        None => *node_ids.first().ok_or(SessionError::Empty)?,
    };

    let pairs: Vec<Direction> = node_ids
        .iter()
        .flat_map(|&a| {
            node_ids
                .iter()
                .filter(move |&&b| b != a)
                .map(move |&b| Direction::new(a, b))
        })
        .collect();

    let round = |prober: &mut P| -> BTreeMap<Direction, Result<MinRttMeasurement, String>> {
        pairs
            .iter()
            .map(|&d| {
                let r = prober.minrtt(d, spec.iterations).map_err(|e| e.to_string());
                if let Err(e) = &r {
                    log::warn!("{}: {e}", pair_key(d));
                }
                (d, r)
            })
            .collect()
    };
    let first = round(prober);
    prober.wait(spec.spacing);
    let second = round(prober);

    let mut errors = BTreeMap::new();
    let mut pair_ok = BTreeMap::new();
    for &d in &pairs {
        match (&first[&d], &second[&d]) {
            (Ok(m1), Ok(m2)) => {
                pair_ok.insert(d, (*m1, *m2));
            }
            (Err(e), _) | (_, Err(e)) => {
                errors.insert(pair_key(d), e.clone());
            }
        }
    }

    let mut ref_freq = None;
    let mut last_reason = String::from("no successful measurement from the reference node");
    for (d, (m1, m2)) in pair_ok.iter().filter(|(d, _)| d.probe == ref_node) {
        match calibrate_frequency(m1.triple.local_sample_start, m2.triple.local_sample_end) {
            Ok(f) => {
                ref_freq = Some(f);
                break;
            }
            Err(e) => last_reason = format!("{}: {e}", pair_key(*d)),
        }
    }
    let ref_freq = ref_freq.ok_or(SessionError::ReferenceUnavailable {
        node: ref_node,
        reason: last_reason,
    })?;

    let mut relations = BTreeMap::new();
    for (&d, &(m1, m2)) in pair_ok.iter().filter(|(d, _)| d.probe == ref_node) {
        match ClockRelation::from_reference(m1, m2, ref_freq) {
            Ok(rel) => {
                relations.insert(d, rel);
            }
            Err(e) => {
                errors.insert(pair_key(d), e.to_string());
            }
        }
    }
    for (&d, &(m1, m2)) in pair_ok.iter().filter(|(d, _)| d.probe != ref_node) {
        let local_freq = relations
            .get(&Direction::new(ref_node, d.probe))
            .and_then(|r: &ClockRelation| CounterFrequency::new(ref_freq.hz() * r.ratio).ok())
            .or_else(|| {
                log::warn!(
                    "{}: no relation from reference, using node {}'s own wall clock",
                    pair_key(d),
                    d.probe
                );
                calibrate_frequency(m1.triple.local_sample_start, m2.triple.local_sample_end).ok()
            });
        let Some(local_freq) = local_freq else {
            errors.insert(pair_key(d), "cannot determine local counter rate".into());
            continue;
        };
        match ClockRelation::new(m1, m2, ref_node, ref_freq, local_freq) {
            Ok(rel) => {
                relations.insert(d, rel);
            }
            Err(e) => {
                errors.insert(pair_key(d), e.to_string());
            }
        }
    }

    Ok(MeasurementSession {
        node_ids,
        iterations: spec.iterations,
        ref_node,
        ref_freq,
        relations,
        errors,
    })
}
