//! In-process fake transport with known ground truth.
//!
//! Every node owns an affine counter of a shared true timeline. Probes advance
//! the timeline by scripted or randomly drawn one-way delays, so the exact
//! instant of each remote read is known to the caller.

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use cp_core::clock::{ClockSample, CycleCount};
use cp_core::relation::{Direction, MinRttMeasurement, NodeId, RttTriple};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::probe::{run_minrtt, MeasureError, ProbeError, ProbeLink};
use crate::session::PairProber;

/// A node's counter and wall clock as functions of true time in nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub hz: f64,
    pub offset_ticks: f64,
    pub wall_offset_ns: i64,
}

impl SimClock {
    pub fn ticks_at(&self, t_ns: f64) -> CycleCount {
        CycleCount((self.offset_ticks + t_ns * self.hz / 1e9).floor() as u64)
    }

    pub fn wall_at(&self, t_ns: f64) -> i64 {
        self.wall_offset_ns + t_ns.floor() as i64
    }

    pub fn sample_at(&self, t_ns: f64) -> ClockSample {
        ClockSample {
            wall_ns: self.wall_at(t_ns),
            cycles: self.ticks_at(t_ns),
        }
    }

    /// Earliest true time at which the counter shows `c`.
    pub fn true_time_of(&self, c: CycleCount) -> f64 {
        (c.0 as f64 - self.offset_ticks) * 1e9 / self.hz
    }
}

/// Source of one-way delays for each probe, in nanoseconds.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayModel {
    Fixed { out_ns: f64, back_ns: f64 },
    /// Round trip `floor + (max − floor)·u^shape`, split at a uniform point
    /// that leaves each leg at least `min_one_way_ns`.
    Jitter {
        floor_rtt_ns: f64,
        max_rtt_ns: f64,
        min_one_way_ns: f64,
        shape: f64,
    },
    /// Consumed front to back; `None` is a lost probe.
    Scripted(VecDeque<Option<(f64, f64)>>),
}

impl DelayModel {
    /// Idle network: one-way delays 30–300 µs, best round trips near 93 µs.
    pub fn quiescent() -> Self {
        DelayModel::Jitter {
            floor_rtt_ns: 93_000.0,
            max_rtt_ns: 330_000.0,
            min_one_way_ns: 30_000.0,
            shape: 4.0,
        }
    }

    /// Congested network: round trips between 2 ms and 16.7 ms.
    pub fn busy() -> Self {
        DelayModel::Jitter {
            floor_rtt_ns: 2_000_000.0,
            max_rtt_ns: 16_697_485.0,
            min_one_way_ns: 30_000.0,
            shape: 1.0,
        }
    }

    pub fn scripted(delays: impl IntoIterator<Item = Option<(f64, f64)>>) -> Self {
        DelayModel::Scripted(delays.into_iter().collect())
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> Result<Option<(f64, f64)>, ProbeError> {
        match self {
            DelayModel::Fixed { out_ns, back_ns } => Ok(Some((*out_ns, *back_ns))),
            DelayModel::Jitter {
                floor_rtt_ns,
                max_rtt_ns,
                min_one_way_ns,
                shape,
            } => {
                let u: f64 = rng.random();
                let rtt = *floor_rtt_ns + (*max_rtt_ns - *floor_rtt_ns) * u.powf(*shape);
                let lo = min_one_way_ns.min(rtt / 2.0);
                let out = if rtt - lo > lo {
                    rng.random_range(lo..rtt - lo)
                } else {
                    rtt / 2.0
                };
                Ok(Some((out, rtt - out)))
            }
            DelayModel::Scripted(q) => q
                .pop_front()
                .ok_or_else(|| ProbeError::Protocol("delay script exhausted".into())),
        }
    }
}

/// A seeded cluster of simulated nodes sharing one true timeline.
#[derive(Debug, Clone)]
pub struct SimCluster {
    clocks: BTreeMap<NodeId, SimClock>,
    now_ns: f64,
    rng: ChaCha8Rng,
    delays: DelayModel,
    /// Idle time between consecutive probes.
    pub probe_gap_ns: f64,
    /// Time charged for a lost probe before the prober gives up on it.
    pub timeout_ns: f64,
}

impl SimCluster {
    pub fn new(
        seed: u64,
        clocks: impl IntoIterator<Item = (NodeId, SimClock)>,
        delays: DelayModel,
    ) -> Self {
        Self {
            clocks: clocks.into_iter().collect(),
            now_ns: 1e9,
            rng: ChaCha8Rng::seed_from_u64(seed),
            delays,
            probe_gap_ns: 10_000.0,
            timeout_ns: 1e9,
        }
    }

    /// `n` nodes with ids `0..n`, frequencies in [1, 4] GHz and arbitrary
    /// offsets, all drawn from `seed`.
    pub fn random(seed: u64, n: u32, delays: DelayModel) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C10C);
        let clocks: Vec<_> = (0..n)
            .map(|i| {
                let clock = SimClock {
                    hz: rng.random_range(1e9..=4e9),
                    offset_ticks: rng.random_range(0.0..1e15f64).floor(),
                    wall_offset_ns: rng.random_range(0..1_000_000_000_000i64),
                };
                (NodeId(i), clock)
            })
            .collect();
        Self::new(seed, clocks, delays)
    }

    pub fn now_ns(&self) -> f64 {
        self.now_ns
    }

    pub fn advance_ns(&mut self, ns: f64) {
        self.now_ns += ns.max(0.0);
    }

    pub fn clock(&self, id: NodeId) -> Option<&SimClock> {
        self.clocks.get(&id)
    }

    pub fn set_delay_model(&mut self, delays: DelayModel) {
        self.delays = delays;
    }

    pub fn link(&mut self, local: NodeId, remote: NodeId) -> Result<SimLink<'_>, MeasureError> {
        let l = *self.clocks.get(&local).ok_or(MeasureError::UnknownNode(local))?;
        let r = *self.clocks.get(&remote).ok_or(MeasureError::UnknownNode(remote))?;
        Ok(SimLink {
            cluster: self,
            local: l,
            remote: r,
            last_remote_read_ns: None,
        })
    }
}

/// Probe path between two simulated nodes.
pub struct SimLink<'a> {
    cluster: &'a mut SimCluster,
    local: SimClock,
    remote: SimClock,
    /// True time of the remote read in the most recent successful probe.
    pub last_remote_read_ns: Option<f64>,
}

impl ProbeLink for SimLink<'_> {
    fn probe(&mut self, seq: u32) -> Result<RttTriple, ProbeError> {
        let c = &mut *self.cluster;
        let t0 = c.now_ns;
        match c.delays.next(&mut c.rng)? {
            None => {
                c.now_ns = t0 + c.timeout_ns;
                Err(ProbeError::Timeout { seq })
            }
            Some((out, back)) => {
                let t1 = t0 + out;
                let t2 = t1 + back;
                c.now_ns = t2 + c.probe_gap_ns;
                self.last_remote_read_ns = Some(t1);
                Ok(RttTriple::from_samples(
                    self.local.sample_at(t0),
                    self.remote.ticks_at(t1),
                    self.local.sample_at(t2),
                ))
            }
        }
    }
}

impl PairProber for SimCluster {
    fn node_ids(&self) -> Vec<NodeId> {
        self.clocks.keys().copied().collect()
    }

    fn minrtt(
        &mut self,
        direction: Direction,
        iterations: u32,
    ) -> Result<MinRttMeasurement, MeasureError> {
        let mut link = self.link(direction.probe, direction.responder)?;
        run_minrtt(&mut link, iterations, direction)
    }

    fn wait(&mut self, spacing: Duration) {
        self.advance_ns(spacing.as_nanos() as f64);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_delays_give_exact_round_trip() {
        let mut sim = SimCluster::random(1, 2, DelayModel::scripted([Some((400_000.0, 600_000.0))]));
        let t = sim.link(NodeId(0), NodeId(1)).unwrap().probe(0).unwrap();
        assert_eq!(t.rtt_wall_ns(), 1_000_000);
        let hz = sim.clock(NodeId(0)).unwrap().hz;
        assert!((t.rtt_ticks() as f64 - hz * 1e-3).abs() <= 1.0);
    }

    #[test]
    fn lost_probe_times_out_and_costs_time() {
        let mut sim = SimCluster::random(1, 2, DelayModel::scripted([None]));
        let before = sim.now_ns();
        let err = sim.link(NodeId(0), NodeId(1)).unwrap().probe(3).unwrap_err();
        assert!(matches!(err, ProbeError::Timeout { seq: 3 }));
        assert_eq!(sim.now_ns() - before, sim.timeout_ns);
    }

    #[test]
    fn jitter_respects_leg_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = DelayModel::quiescent();
        for _ in 0..10_000 {
            let (out, back) = m.next(&mut rng).unwrap().unwrap();
            assert!((30_000.0..=300_000.0).contains(&out), "{out}");
            assert!((30_000.0..=300_000.0).contains(&back), "{back}");
            assert!(out + back >= 93_000.0);
        }
    }

    #[test]
    fn unknown_node_rejected() {
        let mut sim = SimCluster::random(1, 2, DelayModel::quiescent());
        assert!(matches!(
            sim.link(NodeId(0), NodeId(9)),
            Err(MeasureError::UnknownNode(NodeId(9)))
        ));
    }
}
