//! Relating the counters of two nodes.
//!
//! A [`ClockRelation`] is built from two minimum-RTT probes sent from a
//! local node A to a remote node B. Each probe brackets the remote reading
//! `c_j^B` between two local readings `c_i^A` and `c_k^A`; the local instant
//! at which the remote reading happened is only known to lie inside that
//! bracket, so it is carried as a midpoint estimate with a half-RTT
//! uncertainty. Two such anchors give the tick ratio of the counters, and
//! with it any remote reading can be placed on the local timeline together
//! with a propagated error bound.
//!
//! Integer tick arithmetic is done in `i128` and only the final, relative
//! quantities are turned into `f64`, so absolute counter values in the
//! 10^15 range do not eat the precision of tick differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{ClockSample, CounterFrequency, CycleCount};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::str::FromStr for NodeId {
    type Err = std::num::ParseIntError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(NodeId)
    }
}

/// Probing node and responding node of a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Direction {
    pub probe: NodeId,
    pub responder: NodeId,
}

impl Direction {
    pub fn new(probe: NodeId, responder: NodeId) -> Self {
        Self { probe, responder }
    }

    pub fn reversed(self) -> Self {
        Self::new(self.responder, self.probe)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RelationError {
    #[error("degenerate relation: {0}")]
    Degenerate(&'static str),
    #[error("measurements belong to different directions ({0:?} vs {1:?})")]
    DirectionMismatch(Direction, Direction),
    #[error("events out of order: end {end} precedes start {start}")]
    Ordering { start: u64, end: u64 },
}

/// One probe: local counter before sending, remote counter on receipt,
/// local counter after the reply arrived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RttTriple {
    pub c_start_local: CycleCount,
    pub c_remote: CycleCount,
    pub c_end_local: CycleCount,
    pub local_sample_start: ClockSample,
    pub local_sample_end: ClockSample,
}

impl RttTriple {
    /// Triple whose local counter readings are the ones inside the two
    /// clock samples.
    pub fn from_samples(start: ClockSample, c_remote: CycleCount, end: ClockSample) -> Self {
        Self {
            c_start_local: start.cycles,
            c_remote,
            c_end_local: end.cycles,
            local_sample_start: start,
            local_sample_end: end,
        }
    }

    #[inline]
    pub fn rtt_ticks(&self) -> u64 {
        self.c_end_local.0.saturating_sub(self.c_start_local.0)
    }

    #[inline]
    pub fn rtt_wall_ns(&self) -> i64 {
        self.local_sample_end.wall_ns - self.local_sample_start.wall_ns
    }

    /// `c_start_local + c_end_local`, i.e. twice the midpoint, exactly.
    #[inline]
    fn midpoint_x2(&self) -> i128 {
        self.c_start_local.0 as i128 + self.c_end_local.0 as i128
    }
}

/// The winning probe of a minimum-RTT run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinRttMeasurement {
    pub triple: RttTriple,
    pub rtt_ticks: u64,
    /// Round trip on the probing node's raw monotonic clock.
    pub rtt_ns: i64,
    pub probes_run: u32,
    pub direction: Direction,
}

impl MinRttMeasurement {
    pub fn new(triple: RttTriple, probes_run: u32, direction: Direction) -> Self {
        Self {
            rtt_ticks: triple.rtt_ticks(),
            rtt_ns: triple.rtt_wall_ns(),
            triple,
            probes_run,
            direction,
        }
    }
}

/// `best ± uncertainty` in local ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestEstimate {
    pub best: f64,
    pub uncertainty: f64,
}

/// Local instant of the remote reading: bracket midpoint, half-RTT error.
pub fn best_estimate(t: &RttTriple) -> BestEstimate {
    BestEstimate {
        best: t.midpoint_x2() as f64 / 2.0,
        uncertainty: t.rtt_ticks() as f64 / 2.0,
    }
}

/// Ratio `remote_delta / local_delta` of two counters over the same span.
pub fn ratio_from_deltas(remote_delta: f64, local_delta: f64) -> Result<f64, RelationError> {
    if !(local_delta > 0.0) {
        return Err(RelationError::Degenerate("local anchors not increasing"));
    }
    if !(remote_delta > 0.0) {
        return Err(RelationError::Degenerate("remote anchors not increasing"));
    }
    let r = remote_delta / local_delta;
    if r.is_finite() && r > 0.0 {
        Ok(r)
    } else {
        Err(RelationError::Degenerate("ratio not finite"))
    }
}

/// Remote ticks elapsed per local tick between the two anchors, using the
/// local best estimates as the denominator.
pub fn compute_ratio(m1: &MinRttMeasurement, m2: &MinRttMeasurement) -> Result<f64, RelationError> {
    let local = (m2.triple.midpoint_x2() - m1.triple.midpoint_x2()) as f64 / 2.0;
    let remote = m2.triple.c_remote.diff(m1.triple.c_remote) as f64;
    ratio_from_deltas(remote, local)
}

/// Everything needed to place remote readings on the local timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockRelation {
    pub direction: Direction,
    pub m1: MinRttMeasurement,
    pub m2: MinRttMeasurement,
    pub ratio: f64,
    pub est_j: BestEstimate,
    pub est_m: BestEstimate,
    /// Node whose calibrated frequency anchors every tick-to-time conversion.
    pub ref_node: NodeId,
    pub ref_freq: CounterFrequency,
    /// Rate of the local (probing) counter expressed through the reference
    /// node's calibration. Equal to `ref_freq` when the probing node is the
    /// reference node.
    pub local_freq: CounterFrequency,
}

impl ClockRelation {
    pub fn new(
        m1: MinRttMeasurement,
        m2: MinRttMeasurement,
        ref_node: NodeId,
        ref_freq: CounterFrequency,
        local_freq: CounterFrequency,
    ) -> Result<Self, RelationError> {
        if m1.direction != m2.direction {
            return Err(RelationError::DirectionMismatch(m1.direction, m2.direction));
        }
        if m2.triple.c_remote <= m1.triple.c_remote {
            return Err(RelationError::Degenerate("second remote anchor not later"));
        }
        let ratio = compute_ratio(&m1, &m2)?;
        Ok(Self {
            direction: m1.direction,
            ratio,
            est_j: best_estimate(&m1.triple),
            est_m: best_estimate(&m2.triple),
            m1,
            m2,
            ref_node,
            ref_freq,
            local_freq,
        })
    }

    /// Relation probed from the reference node itself.
    pub fn from_reference(
        m1: MinRttMeasurement,
        m2: MinRttMeasurement,
        ref_freq: CounterFrequency,
    ) -> Result<Self, RelationError> {
        Self::new(m1, m2, m1.direction.probe, ref_freq, ref_freq)
    }

    /// Largest anchor uncertainty, the error of an event placed at an anchor.
    pub fn anchor_uncertainty_ticks(&self) -> f64 {
        self.est_j.uncertainty.max(self.est_m.uncertainty)
    }

    pub fn anchor_uncertainty_ns(&self) -> f64 {
        self.local_freq.ticks_to_ns(self.anchor_uncertainty_ticks())
    }

    /// Position of a remote reading relative to the anchors: 0 at `c_j^B`,
    /// 1 at `c_m^B`.
    pub fn interpolation_weight(&self, c_y_remote: CycleCount) -> Result<f64, RelationError> {
        let span = self.m2.triple.c_remote.diff(self.m1.triple.c_remote);
        if span == 0 {
            return Err(RelationError::Degenerate("remote anchors coincide"));
        }
        Ok(c_y_remote.diff(self.m1.triple.c_remote) as f64 / span as f64)
    }
}

/// Local tick value corresponding to a remote reading.
pub fn convert_remote_to_local(c_y_remote: CycleCount, rel: &ClockRelation) -> f64 {
    let remote_offset = c_y_remote.diff(rel.m1.triple.c_remote) as f64;
    rel.est_j.best + remote_offset / rel.ratio
}

/// Inverse of [`convert_remote_to_local`].
pub fn convert_local_to_remote(c_local: f64, rel: &ClockRelation) -> f64 {
    rel.m1.triple.c_remote.0 as f64 + (c_local - rel.est_j.best) * rel.ratio
}

/// `best ± uncertainty`, in local ticks and in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredDuration {
    pub best_ticks: f64,
    pub uncertainty_ticks: f64,
    pub best_ns: f64,
    pub uncertainty_ns: f64,
}

impl MeasuredDuration {
    pub fn from_ticks(best_ticks: f64, uncertainty_ticks: f64, freq: CounterFrequency) -> Self {
        let uncertainty_ticks = uncertainty_ticks.abs();
        Self {
            best_ticks,
            uncertainty_ticks,
            best_ns: freq.ticks_to_ns(best_ticks),
            uncertainty_ns: freq.ticks_to_ns(uncertainty_ticks),
        }
    }

    pub fn negated(self) -> Self {
        Self {
            best_ticks: -self.best_ticks,
            best_ns: -self.best_ns,
            ..self
        }
    }

    /// Whether `ns` lies inside `best_ns ± uncertainty_ns`.
    pub fn contains_ns(&self, ns: f64) -> bool {
        (ns - self.best_ns).abs() <= self.uncertainty_ns
    }
}

/// Duration from local event `c_x_local` to remote event `c_y_remote`.
///
/// With `w` the interpolation weight of `c_y_remote` between the remote
/// anchors, the best estimate is `ĉ_j + w·(ĉ_m − ĉ_j) − c_x` and the
/// propagated error is `|1 − w|·δc_j + |w|·δc_m`. Inside the anchors this is
/// `δc_j − w·(δc_j − δc_m)`; outside it keeps growing with `|w|`.
pub fn duration_with_error(
    c_x_local: CycleCount,
    c_y_remote: CycleCount,
    rel: &ClockRelation,
) -> Result<MeasuredDuration, RelationError> {
    let w = rel.interpolation_weight(c_y_remote)?;
    let anchor_gap = (rel.m2.triple.midpoint_x2() - rel.m1.triple.midpoint_x2()) as f64 / 2.0;
    let from_anchor = (rel.m1.triple.midpoint_x2() - 2 * c_x_local.0 as i128) as f64 / 2.0;
    let best = from_anchor + w * anchor_gap;
    let uncertainty = (1.0 - w).abs() * rel.est_j.uncertainty + w.abs() * rel.est_m.uncertainty;
    Ok(MeasuredDuration::from_ticks(best, uncertainty, rel.local_freq))
}

/// Plain tick difference on one node; exact, so the uncertainty is zero.
pub fn local_duration(
    start: CycleCount,
    end: CycleCount,
    freq: CounterFrequency,
) -> Result<MeasuredDuration, RelationError> {
    if end < start {
        return Err(RelationError::Ordering {
            start: start.0,
            end: end.0,
        });
    }
    Ok(MeasuredDuration::from_ticks(
        end.diff(start) as f64,
        0.0,
        freq,
    ))
}

/// Return-trip duration `T3 − T1` on the start node's counter. Its accuracy
/// is the largest round trip observed during the session.
pub fn ret_duration(
    t1_local: CycleCount,
    t3_local: CycleCount,
    freq: CounterFrequency,
    session_max_rtt_ticks: f64,
) -> Result<MeasuredDuration, RelationError> {
    if t3_local < t1_local {
        return Err(RelationError::Ordering {
            start: t1_local.0,
            end: t3_local.0,
        });
    }
    Ok(MeasuredDuration::from_ticks(
        t3_local.diff(t1_local) as f64,
        session_max_rtt_ticks,
        freq,
    ))
}

/// One NTP status reading, all in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtpStatus {
    /// System time offset still to be slewed away.
    pub offset_s: f64,
    pub root_dispersion_s: f64,
    pub root_delay_s: f64,
    /// Root synchronization distance, carried through for reports only.
    #[serde(default)]
    pub root_sync_distance_s: Option<f64>,
}

impl NtpStatus {
    pub fn new(offset_s: f64, root_dispersion_s: f64, root_delay_s: f64) -> Self {
        Self {
            offset_s,
            root_dispersion_s,
            root_delay_s,
            root_sync_distance_s: None,
        }
    }

    /// True when the bound interval `offset ± (E + Δ/2)` excludes zero.
    pub fn offset_exceeds_bound(&self) -> bool {
        self.offset_s.abs() > self.root_dispersion_s + 0.5 * self.root_delay_s
    }
}

/// Maximum error of an NTP-disciplined clock: `|Θ| + E + Δ/2`.
pub fn ntp_error_bound(s: &NtpStatus) -> f64 {
    s.offset_s.abs() + s.root_dispersion_s + 0.5 * s.root_delay_s
}
