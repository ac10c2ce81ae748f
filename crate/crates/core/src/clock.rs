//! Platform clock access.
//!
//! A process selects one counter source at startup and keeps it for its
//! lifetime. Every timestamp taken by the rest of the workspace goes through
//! [`read_cycles`], [`monotonic_raw_ns`] or [`sample_clock_pair`], so the
//! downstream math never needs to know which source is active.
//!
//! Sources:
//! - [`CounterSource::Tsc`]: the invariant time-stamp counter (x86_64 with
//!   nonstop and constant TSC advertised by CPUID).
//! - [`CounterSource::Monotonic`]: `CLOCK_MONOTONIC_RAW` treated as a 1 GHz
//!   virtual counter. Used when no invariant counter is available.
//! - [`CounterSource::Virtual`]: an affine transform of `CLOCK_MONOTONIC_RAW`
//!   with a chosen rate and offset. Lets several processes on one host
//!   behave like nodes with unrelated counters.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Raw counter ticks read from one node.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CycleCount(pub u64);

impl CycleCount {
    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }

    /// Signed difference `self - earlier`, exact for any pair of u64 values.
    #[inline]
    pub fn diff(self, earlier: CycleCount) -> i128 {
        self.0 as i128 - earlier.0 as i128
    }
}

impl fmt::Display for CycleCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A wall-clock reading and a counter reading taken back to back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClockSample {
    /// Nanoseconds from the raw monotonic clock.
    pub wall_ns: i64,
    pub cycles: CycleCount,
}

/// Counter ticks per second.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CounterFrequency(f64);

impl CounterFrequency {
    pub fn new(hz: f64) -> Result<Self, ClockError> {
        if hz.is_finite() && hz > 0.0 {
            Ok(Self(hz))
        } else {
            Err(ClockError::InvalidFrequency(hz))
        }
    }

    #[inline]
    pub fn hz(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn ticks_to_ns(self, ticks: f64) -> f64 {
        ticks * 1e9 / self.0
    }

    #[inline]
    pub fn ns_to_ticks(self, ns: f64) -> f64 {
        ns * self.0 / 1e9
    }
}

impl TryFrom<f64> for CounterFrequency {
    type Error = ClockError;
    fn try_from(hz: f64) -> Result<Self, ClockError> {
        Self::new(hz)
    }
}

impl From<CounterFrequency> for f64 {
    fn from(f: CounterFrequency) -> f64 {
        f.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ClockError {
    #[error("invalid clock sample pair: wall delta {wall_delta_ns} ns, cycle delta {cycle_delta}")]
    InvalidSample {
        wall_delta_ns: i64,
        cycle_delta: i128,
    },
    #[error("counter frequency must be positive and finite, got {0}")]
    InvalidFrequency(f64),
    #[error("counter source already initialized as {0}")]
    AlreadyInitialized(CounterSource),
    #[error("invariant cycle counter not available on this platform")]
    TscUnavailable,
    #[error("cannot parse counter source {0:?}")]
    ParseSource(String),
}

/// Where counter ticks come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterSource {
    Tsc,
    Monotonic,
    Virtual { hz: u64, offset: u64 },
}

impl CounterSource {
    /// Native invariant counter when the CPU advertises it, otherwise the
    /// monotonic fallback.
    pub fn detect() -> Self {
        if tsc_is_invariant() {
            CounterSource::Tsc
        } else {
            CounterSource::Monotonic
        }
    }

    /// Nominal rate in Hz where it is known without calibration.
    pub fn nominal_hz(self) -> Option<f64> {
        match self {
            CounterSource::Tsc => None,
            CounterSource::Monotonic => Some(1e9),
            CounterSource::Virtual { hz, .. } => Some(hz as f64),
        }
    }

    #[inline]
    fn read(self) -> u64 {
        match self {
            CounterSource::Tsc => rdtscp(),
            CounterSource::Monotonic => monotonic_raw_ns() as u64,
            CounterSource::Virtual { hz, offset } => virtual_ticks(monotonic_raw_ns(), hz, offset),
        }
    }
}

impl fmt::Display for CounterSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CounterSource::Tsc => f.write_str("tsc"),
            CounterSource::Monotonic => f.write_str("monotonic"),
            CounterSource::Virtual { hz, offset } => write!(f, "virtual:{hz}:{offset}"),
        }
    }
}

impl FromStr for CounterSource {
    type Err = ClockError;

    /// Accepts `tsc`, `monotonic`, `auto` and `virtual:<hz>[:<offset>]`.
    fn from_str(s: &str) -> Result<Self, ClockError> {
        let err = || ClockError::ParseSource(s.to_string());
        match s {
            "tsc" => Ok(CounterSource::Tsc),
            "monotonic" => Ok(CounterSource::Monotonic),
            "auto" => Ok(CounterSource::detect()),
            _ => {
                let rest = s.strip_prefix("virtual:").ok_or_else(err)?;
                let mut parts = rest.split(':');
                let hz: u64 = parts.next().and_then(|p| p.parse().ok()).ok_or_else(err)?;
                let offset: u64 = match parts.next() {
                    Some(p) => p.parse().map_err(|_| err())?,
                    None => 0,
                };
                if hz == 0 || parts.next().is_some() {
                    return Err(err());
                }
                Ok(CounterSource::Virtual { hz, offset })
            }
        }
    }
}

/// Environment variable consulted by [`source`] when nothing was installed.
pub const SOURCE_ENV: &str = "CP_COUNTER_SOURCE";

static SOURCE: OnceLock<CounterSource> = OnceLock::new();

/// Installs the process-wide counter source. Must happen before the first
/// timestamp is taken; afterwards the source is fixed.
pub fn init(source: CounterSource) -> Result<(), ClockError> {
    if source == CounterSource::Tsc && !tsc_is_invariant() {
        return Err(ClockError::TscUnavailable);
    }
    let mut installed = false;
    let active = *SOURCE.get_or_init(|| {
        installed = true;
        source
    });
    if installed || active == source {
        Ok(())
    } else {
        Err(ClockError::AlreadyInitialized(active))
    }
}

/// The active counter source, selecting one on first use from
/// `CP_COUNTER_SOURCE` or by detection.
#[inline]
pub fn source() -> CounterSource {
    *SOURCE.get_or_init(|| {
        std::env::var(SOURCE_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|s| *s != CounterSource::Tsc || tsc_is_invariant())
            .unwrap_or_else(CounterSource::detect)
    })
}

/// Current counter value of the active source.
#[inline]
pub fn read_cycles() -> CycleCount {
    CycleCount(source().read())
}

/// `CLOCK_MONOTONIC_RAW` in nanoseconds. Not subject to NTP slewing.
#[inline]
pub fn monotonic_raw_ns() -> i64 {
    let mut ts = libc::timespec {
        tv_sec: 0,
        tv_nsec: 0,
    };
    // SAFETY: `ts` is a valid out-pointer and CLOCK_MONOTONIC_RAW exists on
    // every Linux kernel this crate targets.
    unsafe {
        libc::clock_gettime(libc::CLOCK_MONOTONIC_RAW, &mut ts);
    }
    ts.tv_sec as i64 * 1_000_000_000 + ts.tv_nsec as i64
}

/// Wall clock first, then the counter. Sources derived from the monotonic
/// clock take both values from a single read.
#[inline]
pub fn sample_clock_pair() -> ClockSample {
    let wall_ns = monotonic_raw_ns();
    let cycles = match source() {
        CounterSource::Tsc => rdtscp(),
        CounterSource::Monotonic => wall_ns as u64,
        CounterSource::Virtual { hz, offset } => virtual_ticks(wall_ns, hz, offset),
    };
    ClockSample {
        wall_ns,
        cycles: CycleCount(cycles),
    }
}

/// Counter rate from two samples of the same node, in ticks per second.
pub fn calibrate_frequency(
    s1: ClockSample,
    s2: ClockSample,
) -> Result<CounterFrequency, ClockError> {
    let wall_delta_ns = s2.wall_ns - s1.wall_ns;
    let cycle_delta = s2.cycles.diff(s1.cycles);
    if wall_delta_ns <= 0 || cycle_delta <= 0 {
        return Err(ClockError::InvalidSample {
            wall_delta_ns,
            cycle_delta,
        });
    }
    CounterFrequency::new(cycle_delta as f64 * 1e9 / wall_delta_ns as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTestReport {
    pub source: CounterSource,
    pub iterations: u64,
    pub mean_latency_ns: f64,
    pub monotonic_violations: u64,
}

/// Minimum iteration count accepted by [`self_test_counter`].
pub const MIN_SELF_TEST_ITERATIONS: u64 = 10_000;

/// Times `iterations` back-to-back counter reads and counts backward steps.
/// Fewer than 10^4 iterations are raised to 10^4.
pub fn self_test_counter(iterations: u64) -> SelfTestReport {
    let iterations = iterations.max(MIN_SELF_TEST_ITERATIONS);
    let src = source();
    let mut violations = 0u64;
    let start = monotonic_raw_ns();
    let mut prev = src.read();
    for _ in 0..iterations {
        let now = src.read();
        if now < prev {
            violations += 1;
        }
        prev = now;
    }
    let elapsed = monotonic_raw_ns() - start;
    SelfTestReport {
        source: src,
        iterations,
        mean_latency_ns: elapsed as f64 / iterations as f64,
        monotonic_violations: violations,
    }
}

#[inline]
fn virtual_ticks(wall_ns: i64, hz: u64, offset: u64) -> u64 {
    let scaled = (wall_ns.max(0) as u128 * hz as u128) / 1_000_000_000u128;
    offset.wrapping_add(scaled as u64)
}

#[cfg(target_arch = "x86_64")]
#[inline]
fn rdtscp() -> u64 {
    let mut aux = 0u32;
    // SAFETY: only reached when CPUID reported RDTSCP and an invariant TSC.
    unsafe { std::arch::x86_64::__rdtscp(&mut aux) }
}

#[cfg(not(target_arch = "x86_64"))]
#[inline]
fn rdtscp() -> u64 {
    monotonic_raw_ns() as u64
}

/// CPUID leaf 0x8000_0007 EDX bit 8 (invariant TSC, i.e. nonstop and
/// constant) plus RDTSCP support in leaf 0x8000_0001 EDX bit 27.
#[cfg(target_arch = "x86_64")]
pub fn tsc_is_invariant() -> bool {
    use std::arch::x86_64::__cpuid;
    // SAFETY: CPUID is available on every x86_64 CPU.
    #[allow(unused_unsafe)]
    unsafe {
        let max_ext = __cpuid(0x8000_0000).eax;
        if max_ext < 0x8000_0007 {
            return false;
        }
        let rdtscp = __cpuid(0x8000_0001).edx & (1 << 27) != 0;
        let invariant = __cpuid(0x8000_0007).edx & (1 << 8) != 0;
        rdtscp && invariant
    }
}

#[cfg(not(target_arch = "x86_64"))]
pub fn tsc_is_invariant() -> bool {
    false
}
