//! Single probes and minimum-RTT selection.

use std::io;

use cp_core::relation::{Direction, MinRttMeasurement, RttTriple};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("probe {seq} timed out")]
    Timeout { seq: u32 },
    #[error("probe transport: {0}")]
    Io(#[from] io::Error),
    #[error("probe protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("all {attempted} probes failed, last error: {last}")]
    AllProbesFailed { attempted: u32, last: String },
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("unknown node {0}")]
    UnknownNode(cp_core::NodeId),
    #[error("{0}")]
    Remote(String),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// A connection from the probing node to one responder.
pub trait ProbeLink {
    /// Sends one request and returns the bracketing local readings with the
    /// responder's counter value.
    fn probe(&mut self, seq: u32) -> Result<RttTriple, ProbeError>;
}

impl<L: ProbeLink + ?Sized> ProbeLink for &mut L {
    fn probe(&mut self, seq: u32) -> Result<RttTriple, ProbeError> {
        (**self).probe(seq)
    }
}

/// Runs `iterations` probes and keeps the one with the smallest round trip.
/// Failed probes are skipped; `probes_run` counts the successful ones.
pub fn run_minrtt<L: ProbeLink + ?Sized>(
    link: &mut L,
    iterations: u32,
    direction: Direction,
) -> Result<MinRttMeasurement, MeasureError> {
    if iterations == 0 {
        return Err(MeasureError::NoIterations);
    }
    let mut best: Option<RttTriple> = None;
    let mut ok = 0u32;
    let mut last_err = None;
    for seq in 0..iterations {
        match link.probe(seq) {
            Ok(t) => {
                ok += 1;
                if best.map_or(true, |b| t.rtt_ticks() < b.rtt_ticks()) {
                    best = Some(t);
                }
            }
            Err(e) => {
                log::debug!("probe {seq} {direction:?}: {e}");
                last_err = Some(e);
            }
        }
    }
    match best {
        Some(t) => Ok(MinRttMeasurement::new(t, ok, direction)),
        None => Err(MeasureError::AllProbesFailed {
            attempted: iterations,
            last: last_err.map(|e| e.to_string()).unwrap_or_default(),
        }),
    }
}
