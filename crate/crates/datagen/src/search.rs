//! Maximum sustainable throughput search.

use std::io;
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlClient, ControlError};
use crate::bucket::DEFAULT_MAX_AGE;
use crate::emit::{measure_send_overhead, run_emission, BucketTransport};
use crate::plan::{EmissionPlan, PlanError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    /// Rate actually planned, after rounding to a whole tuple count.
    pub rate: f64,
    pub sent: u64,
    pub ingested: u64,
    pub dropped: u64,
    pub achieved_rate: f64,
    #[serde(default)]
    pub deadline_misses: u64,
}

impl RunOutcome {
    pub fn new(rate: f64, sent: u64, ingested: u64, achieved_rate: f64, deadline_misses: u64) -> Self {
        Self {
            rate,
            sent,
            ingested,
            dropped: sent.saturating_sub(ingested),
            achieved_rate,
            deadline_misses,
        }
    }

    pub fn clean(&self) -> bool {
        self.dropped == 0
    }
}

#[derive(Debug, Error)]
pub enum SutError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// A system under test that can run one constant-rate trial and report how
/// many tuples it ingested.
pub trait Sut {
    fn run(&mut self, rate: f64, duration: Duration) -> Result<RunOutcome, SutError>;
}

impl<S: Sut + ?Sized> Sut for &mut S {
    fn run(&mut self, rate: f64, duration: Duration) -> Result<RunOutcome, SutError> {
        (**self).run(rate, duration)
    }
}

/// Ingests at most `capacity · duration` tuples per run.
#[derive(Debug, Clone)]
pub struct FakeSut {
    pub capacity: f64,
    pub runs: Vec<RunOutcome>,
}

impl FakeSut {
    pub fn new(capacity: f64) -> Self {
        Self {
            capacity,
            runs: Vec::new(),
        }
    }
}

impl Sut for FakeSut {
    fn run(&mut self, rate: f64, duration: Duration) -> Result<RunOutcome, SutError> {
        let secs = duration.as_secs_f64();
        let rate = EmissionPlan::floor_rate(rate, duration);
        let sent = (rate * secs).round() as u64;
        let limit = if self.capacity.is_finite() {
            (self.capacity * secs).floor() as u64
        } else {
            u64::MAX
        };
        let out = RunOutcome::new(rate, sent, sent.min(limit), rate, 0);
        self.runs.push(out);
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub start: f64,
    /// Ramp multiplier applied until the first run with drops.
    pub factor: f64,
    /// Bisection stops once `(fail − pass) / pass` is at most this.
    pub refine: f64,
    pub max_runs: u32,
    pub duration: Duration,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            start: 100_000.0,
            factor: 1.5,
            refine: 0.02,
            max_runs: 20,
            duration: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Refined,
    RunLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub rate: f64,
    pub best: RunOutcome,
    pub runs: Vec<RunOutcome>,
    pub stop: StopReason,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("drops at the starting rate: {} of {} tuples lost", .0.dropped, .0.sent)]
    BelowFloor(RunOutcome),
    #[error("invalid search config: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Sut(#[from] SutError),
}

/// Geometric ramp from `cfg.start` until a run drops tuples, then bisection
/// between the last clean rate and the first dropping one. Returns the
/// highest rate whose run dropped nothing.
pub fn evaluate_max_throughput<S: Sut>(sut: &mut S, cfg: &SearchConfig) -> Result<SearchResult, SearchError> {
    if !(cfg.start > 0.0 && cfg.start.is_finite()) {
        return Err(SearchError::Config("start rate must be positive"));
    }
    if !(cfg.factor > 1.0) {
        return Err(SearchError::Config("factor must exceed 1"));
    }
    if !(cfg.refine > 0.0) {
        return Err(SearchError::Config("refine must be positive"));
    }
    if cfg.max_runs == 0 {
        return Err(SearchError::Config("at least one run is required"));
    }
    let mut runs = Vec::new();
    let mut trial = |rate: f64, runs: &mut Vec<RunOutcome>| -> Result<RunOutcome, SearchError> {
        let out = sut.run(rate, cfg.duration)?;
        log::info!(
            "rate {:.0}: sent {} ingested {} dropped {}",
            out.rate,
            out.sent,
            out.ingested,
            out.dropped
        );
        runs.push(out);
        Ok(out)
    };
    let first = trial(cfg.start, &mut runs)?;
    if !first.clean() {
        return Err(SearchError::BelowFloor(first));
    }
    let mut pass = (cfg.start, first);
    let finish = |pass: (f64, RunOutcome), runs: Vec<RunOutcome>, stop| SearchResult {
        rate: pass.1.rate,
        best: pass.1,
        runs,
        stop,
    };
    let mut fail = loop {
        if runs.len() >= cfg.max_runs as usize {
            return Ok(finish(pass, runs, StopReason::RunLimit));
        }
        let next = pass.0 * cfg.factor;
        let out = trial(next, &mut runs)?;
        if out.clean() {
            pass = (next, out);
        } else {
            break next;
        }
    };
    while (fail - pass.0) / pass.0 > cfg.refine {
        if runs.len() >= cfg.max_runs as usize {
            return Ok(finish(pass, runs, StopReason::RunLimit));
        }
        let mid = 0.5 * (pass.0 + fail);
        let out = trial(mid, &mut runs)?;
        if out.clean() {
            pass = (mid, out);
        } else {
            fail = mid;
        }
    }
    Ok(finish(pass, runs, StopReason::Refined))
}

/// A remote receiver driven over TCP: one data connection per sender thread
/// plus a control connection for the counts.
pub struct TcpSut {
    pub data: SocketAddr,
    pub threads: usize,
    pub budget_ns: u64,
    pub payload: Vec<u8>,
    pub bucket: usize,
    pub max_age: Duration,
    pub overhead_ns: f64,
    control: ControlClient,
}

impl TcpSut {
    /// Connects the control channel and measures the per-send overhead of
    /// bucket packing.
    pub fn connect(
        data: SocketAddr,
        control: SocketAddr,
        threads: usize,
        budget_ns: u64,
        payload: Vec<u8>,
        bucket: usize,
    ) -> Result<Self, SutError> {
        let max_age = DEFAULT_MAX_AGE;
        let mut probe = BucketTransport::new(io::sink(), bucket, max_age);
        let overhead_ns = measure_send_overhead(&mut probe, &payload, 0)?;
        Ok(Self {
            data,
            threads,
            budget_ns,
            payload,
            bucket,
            max_age,
            overhead_ns,
            control: ControlClient::connect(control)?,
        })
    }
}

impl Sut for TcpSut {
    fn run(&mut self, rate: f64, duration: Duration) -> Result<RunOutcome, SutError> {
        let rate = EmissionPlan::floor_rate(rate, duration);
        let plan = EmissionPlan::new(
            rate,
            duration,
            self.budget_ns,
            self.threads,
            self.payload.clone(),
            self.overhead_ns,
        )?;
        self.control.begin_run()?;
        let summary = run_emission(&plan, |_| {
            let s = TcpStream::connect(self.data)?;
            s.set_nodelay(true)?;
            Ok(BucketTransport::new(s, self.bucket, self.max_age))
        })?;
        let counts = self.control.finish_run(summary.sent)?;
        Ok(RunOutcome::new(
            rate,
            summary.sent,
            counts.ingested,
            summary.achieved_rate,
            summary.deadline_misses,
        ))
    }
}
